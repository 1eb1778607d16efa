//! Linear dynamical system with quadratic risk and its closed-form
//! sensitivities.
//!
//! `h_t = A h_{t-1} + B x_t`, `p_t = 0.5 h_t' Q h_t` with `Q = I` unless
//! given. Steps are 1-based: inputs `x_1..x_T`, `h_0` is part of the system.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::attribution::RiskModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LdsJson", into = "LdsJson")]
pub struct LdSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    h0: DVector<f64>,
    q: Option<DMatrix<f64>>,
}

/// Row-major JSON form.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LdsJson {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    h0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<Vec<Vec<f64>>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl From<LdSystem> for LdsJson {
    fn from(s: LdSystem) -> Self {
        LdsJson { a: to_rows(&s.a), b: to_rows(&s.b), h0: s.h0.iter().copied().collect(), q: s.q.as_ref().map(to_rows) }
    }
}

impl TryFrom<LdsJson> for LdSystem {
    type Error = Error;

    fn try_from(j: LdsJson) -> Result<Self> {
        let q = j.q.as_deref().map(|q| from_rows(q, "Q")).transpose()?;
        LdSystem::new(from_rows(&j.a, "A")?, from_rows(&j.b, "B")?, DVector::from_vec(j.h0), q)
    }
}

/// Hidden states `h_1..h_T` and risks `p_1..p_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsTrace {
    pub h0: DVector<f64>,
    pub hidden: Vec<DVector<f64>>,
    pub risk: Vec<f64>,
}

impl LdsTrace {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    /// `h_t` for `0 <= t <= T`.
    pub fn h(&self, t: usize) -> &DVector<f64> {
        if t == 0 {
            &self.h0
        } else {
            &self.hidden[t - 1]
        }
    }
}

impl LdSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, h0: DVector<f64>, q: Option<DMatrix<f64>>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}, must be square", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, A has {n}", b.nrows())));
        }
        if h0.len() != n {
            return Err(Error::Dimension(format!("h0 has length {}, expected {n}", h0.len())));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&a) || !finite(&b) || !h0.iter().all(|v| v.is_finite()) || q.as_ref().is_some_and(|q| !finite(q)) {
            return Err(Error::NonFinite("system matrices".into()));
        }
        if let Some(q) = &q {
            if q.nrows() != n || q.ncols() != n {
                return Err(Error::Dimension(format!("Q is {}x{}, expected {n}x{n}", q.nrows(), q.ncols())));
            }
            let scale = q.amax().max(1.0);
            if (q - q.transpose()).amax() > 1e-12 * scale {
                return Err(Error::Dimension("Q must be symmetric".into()));
            }
            let eig = q.clone().symmetric_eigen();
            if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
                return Err(Error::Dimension("Q must be positive semidefinite".into()));
            }
        }
        Ok(Self { a, b, h0, q })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn h0(&self) -> &DVector<f64> {
        &self.h0
    }

    pub fn q(&self) -> Option<&DMatrix<f64>> {
        self.q.as_ref()
    }

    /// `Q h`, with `Q = I` when absent.
    fn q_times(&self, h: &DVector<f64>) -> DVector<f64> {
        match &self.q {
            Some(q) => q * h,
            None => h.clone(),
        }
    }

    pub fn risk_of(&self, h: &DVector<f64>) -> f64 {
        0.5 * h.dot(&self.q_times(h))
    }

    fn check_inputs(&self, x: &[DVector<f64>]) -> Result<()> {
        let d = self.input_dim();
        match x.iter().position(|v| v.len() != d) {
            Some(t) => {
                Err(Error::Dimension(format!("input at step {} has length {}, expected {d}", t + 1, x[t].len())))
            }
            None => Ok(()),
        }
    }

    pub fn run(&self, x: &[DVector<f64>]) -> Result<LdsTrace> {
        self.check_inputs(x)?;
        let mut hidden = Vec::with_capacity(x.len());
        let mut risk = Vec::with_capacity(x.len());
        let mut h = self.h0.clone();
        for xt in x {
            h = &self.a * &h + &self.b * xt;
            risk.push(self.risk_of(&h));
            hidden.push(h.clone());
        }
        Ok(LdsTrace { h0: self.h0.clone(), hidden, risk })
    }

    /// `A^0 .. A^max` by repeated multiplication.
    fn powers(&self, max: usize) -> Vec<DMatrix<f64>> {
        let n = self.state_dim();
        let mut out = Vec::with_capacity(max + 1);
        out.push(DMatrix::identity(n, n));
        for k in 1..=max {
            let next = &self.a * &out[k - 1];
            out.push(next);
        }
        out
    }

    fn check_step(&self, trace: &LdsTrace, t: usize, t1: usize) -> Result<()> {
        if t == 0 || t1 == 0 {
            return Err(Error::Window(format!("steps are 1-based, got t={t}, t1={t1}")));
        }
        if t > t1 {
            return Err(Error::Window(format!("input step {t} lies after the explained step {t1}")));
        }
        if t1 > trace.len() {
            return Err(Error::Window(format!("t1={t1} beyond trace length {}", trace.len())));
        }
        Ok(())
    }

    /// `dp_{t1}/dx_t = h_{t1}' Q A^{t1-t} B`.
    pub fn input_gradient(&self, trace: &LdsTrace, t: usize, t1: usize) -> Result<DVector<f64>> {
        self.check_step(trace, t, t1)?;
        let powers = self.powers(t1 - t);
        let w = self.q_times(trace.h(t1));
        Ok(self.b.transpose() * (powers[t1 - t].transpose() * w))
    }

    /// Gradients for every `t in 1..=t1`, sharing one table of powers.
    pub fn input_gradients(&self, trace: &LdsTrace, t1: usize) -> Result<Vec<DVector<f64>>> {
        self.check_step(trace, 1, t1)?;
        let powers = self.powers(t1 - 1);
        let w = self.q_times(trace.h(t1));
        Ok((1..=t1).map(|t| self.b.transpose() * (powers[t1 - t].transpose() * &w)).collect())
    }

    /// Path-integrated gradient from baseline `b` to target `x` for
    /// `p_{t1}`. Column `t-1` holds step `t`; the averaged gradient
    /// `((h_{t1}[b] + h_{t1}[x]) / 2)' Q A^{t1-t} B` times `(x_t - b_t)`.
    pub fn integrated_gradient(&self, b: &[DVector<f64>], x: &[DVector<f64>], t1: usize) -> Result<Vec<DVector<f64>>> {
        self.integrated_parts(b, x, t1).map(|(_, attr)| attr)
    }

    /// Averaged gradients and the resulting attribution.
    pub fn integrated_parts(
        &self,
        b: &[DVector<f64>],
        x: &[DVector<f64>],
        t1: usize,
    ) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
        if b.len() != x.len() {
            return Err(Error::Dimension(format!("baseline has {} steps, target has {}", b.len(), x.len())));
        }
        if t1 == 0 || t1 > x.len() {
            return Err(Error::Window(format!("t1={t1} outside 1..={}", x.len())));
        }
        let tb = self.run(&b[..t1])?;
        let tx = self.run(&x[..t1])?;
        let mid = (tb.h(t1) + tx.h(t1)) * 0.5;
        let w = self.q_times(&mid);
        let powers = self.powers(t1 - 1);
        let mut avg = Vec::with_capacity(t1);
        let mut attr = Vec::with_capacity(t1);
        for t in 1..=t1 {
            let g = self.b.transpose() * (powers[t1 - t].transpose() * &w);
            attr.push(g.component_mul(&(&x[t - 1] - &b[t - 1])));
            avg.push(g);
        }
        Ok((avg, attr))
    }

    /// `h_t' Q A h_{t-1} + h_t' Q B x_t` for every step.
    pub fn time_derivative(&self, trace: &LdsTrace, x: &[DVector<f64>]) -> Result<Vec<f64>> {
        self.check_inputs(x)?;
        if x.len() != trace.len() {
            return Err(Error::Dimension(format!("trace has {} steps, inputs have {}", trace.len(), x.len())));
        }
        Ok((1..=trace.len())
            .map(|t| {
                let qh = self.q_times(trace.h(t));
                qh.dot(&(&self.a * trace.h(t - 1))) + qh.dot(&(&self.b * &x[t - 1]))
            })
            .collect())
    }
}

impl RiskModel for LdSystem {
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn risk_and_gradient(&self, x: &[f64], t1: usize) -> (f64, Vec<f64>) {
        let d = self.input_dim();
        let steps: Vec<DVector<f64>> = (0..t1).map(|t| DVector::from_row_slice(&x[t * d..(t + 1) * d])).collect();
        let trace = self.run(&steps).expect("input rows have the model's width");
        let grads = self.input_gradients(&trace, t1).expect("t1 within trace");
        (trace.risk[t1 - 1], grads.iter().flat_map(|g| g.iter().copied()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn memoryless() -> LdSystem {
        LdSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), DVector::zeros(2), None).unwrap()
    }

    #[test]
    fn memoryless_run() {
        let sys = memoryless();
        let tr = sys.run(&[v(&[1.0, 0.0]), v(&[0.0, 2.0])]).unwrap();
        assert_eq!(tr.hidden, vec![v(&[1.0, 0.0]), v(&[0.0, 2.0])]);
        assert_eq!(tr.risk, vec![0.5, 2.0]);
    }

    #[test]
    fn zero_inputs_zero_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let sys = LdSystem::new(a, DMatrix::identity(3, 2), DVector::zeros(3), None).unwrap();
        let x = vec![DVector::zeros(2); 5];
        let tr = sys.run(&x).unwrap();
        assert!(tr.risk.iter().all(|&p| p == 0.0));
        assert!(sys.time_derivative(&tr, &x).unwrap().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn memoryless_gradients() {
        let sys = memoryless();
        let x = [v(&[1.0, 0.0]), v(&[0.0, 2.0])];
        let tr = sys.run(&x).unwrap();
        assert_eq!(sys.input_gradient(&tr, 2, 2).unwrap(), v(&[0.0, 2.0]));
        assert_eq!(sys.input_gradient(&tr, 1, 2).unwrap(), v(&[0.0, 0.0]));
    }

    #[test]
    fn future_input_is_an_error() {
        let sys = memoryless();
        let tr = sys.run(&[v(&[1.0, 0.0]), v(&[0.0, 2.0])]).unwrap();
        assert!(matches!(sys.input_gradient(&tr, 2, 1), Err(Error::Window(_))));
        assert!(sys.input_gradient(&tr, 1, 3).is_err());
    }

    #[test]
    fn dimension_errors() {
        assert!(LdSystem::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1), DVector::zeros(2), None).is_err());
        assert!(LdSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1), DVector::zeros(2), None).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(LdSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), DVector::zeros(2), Some(asym)).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(LdSystem::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 1), DVector::zeros(2), Some(indefinite)).is_err());
        let sys = memoryless();
        assert!(sys.run(&[v(&[1.0])]).is_err());
        let x = [v(&[1.0, 0.0])];
        assert!(sys.integrated_gradient(&x, &[v(&[1.0, 0.0]), v(&[1.0, 0.0])], 1).is_err());
    }

    #[test]
    fn scaled_identity_grows_by_c_per_step() {
        let c = 1.7;
        let sys = LdSystem::new(DMatrix::identity(2, 2) * c, DMatrix::identity(2, 2), DVector::zeros(2), None).unwrap();
        // hold h_{t1} fixed by feeding zeros after step 1, so only A^{t1-t} varies
        let mut x = vec![v(&[1.0, 0.5])];
        x.extend(std::iter::repeat_n(DVector::zeros(2), 6));
        let tr = sys.run(&x).unwrap();
        for t1 in 2..=6 {
            let g_near = sys.input_gradient(&tr, t1, t1).unwrap().norm();
            let g_far = sys.input_gradient(&tr, t1 - 1, t1).unwrap().norm();
            assert!((g_far / g_near - c).abs() < 1e-12);
        }
    }

    #[test]
    fn json_round_trip_is_row_major() {
        let sys = LdSystem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DMatrix::from_row_slice(2, 1, &[5.0, 6.0]),
            v(&[0.1, 0.2]),
            Some(DMatrix::identity(2, 2) * 2.0),
        )
        .unwrap();
        let json = serde_json::to_value(&sys).unwrap();
        assert_eq!(json["a"], serde_json::json!([[1.0, 2.0], [3.0, 4.0]]));
        let back: LdSystem = serde_json::from_value(json).unwrap();
        assert_eq!(back, sys);
    }

    #[test]
    fn appended_inputs_leave_gradient_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-0.8..0.8));
        let b = DMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0));
        let sys = LdSystem::new(a, b, v(&[0.1, -0.2, 0.3]), None).unwrap();
        let mut x: Vec<_> = (0..5).map(|_| v(&[rng.random(), rng.random()])).collect();
        let before = sys.input_gradient(&sys.run(&x).unwrap(), 2, 4).unwrap();
        x.push(v(&[9.0, -9.0]));
        x.push(v(&[3.0, 3.0]));
        let after = sys.input_gradient(&sys.run(&x).unwrap(), 2, 4).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn identical_baseline_gives_zero_attribution() {
        let sys = memoryless();
        let x = [v(&[1.0, 0.0]), v(&[0.0, 2.0])];
        let attr = sys.integrated_gradient(&x, &x, 2).unwrap();
        assert!(attr.iter().all(|c| c.iter().all(|&e| e == 0.0)));
    }
}
