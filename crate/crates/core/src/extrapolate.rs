//! Besl–McKay style extrapolation of an iterative update sequence.

use nalgebra::DVector;

/// Largest angle between successive update directions still treated as aligned.
const ALIGN_ANGLE: f64 = 10.0 * std::f64::consts::PI / 180.0;
/// Cap on the jump length as a multiple of the last step.
const MAX_JUMP: f64 = 25.0;

/// Tracks the last three states and their errors and proposes a jump along
/// the update direction once two consecutive step pairs point the same way.
/// The jump length comes from a line and a parabola fitted to the errors.
#[derive(Debug, Default)]
pub(crate) struct Extrapolator {
    states: Vec<DVector<f64>>,
    errors: Vec<f64>,
    aligned_before: bool,
}

impl Extrapolator {
    pub(crate) fn last(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub(crate) fn push(&mut self, state: DVector<f64>, error: f64) -> Option<DVector<f64>> {
        self.states.push(state);
        self.errors.push(error);
        if self.states.len() > 3 {
            self.states.remove(0);
            self.errors.remove(0);
        }
        if self.states.len() < 3 {
            return None;
        }
        let d0 = &self.states[1] - &self.states[0];
        let d1 = &self.states[2] - &self.states[1];
        let (n0, n1) = (d0.norm(), d1.norm());
        if n0 == 0.0 || n1 == 0.0 {
            return None;
        }
        let angle = (d0.dot(&d1) / (n0 * n1)).clamp(-1.0, 1.0).acos();
        let aligned = angle < ALIGN_ANGLE;
        let ready = aligned && self.aligned_before;
        self.aligned_before = aligned;
        if !ready {
            return None;
        }
        let v_max = MAX_JUMP * n1;
        let [e0, e1, e2] = [self.errors[0], self.errors[1], self.errors[2]];
        let (x0, x1) = (-(n0 + n1), -n1);
        let slope = (e2 - e1) / n1;
        if !(slope < 0.0) {
            return None;
        }
        let v_line = -e2 / slope;
        // parabola through (x0, e0), (x1, e1), (0, e2)
        let a = ((e0 - e2) / x0 - (e1 - e2) / x1) / (x0 - x1);
        let b = (e1 - e2) / x1 - a * x1;
        let v_par = if a > 0.0 { -b / (2.0 * a) } else { f64::NAN };
        let v = if v_par > 0.0 && v_par < v_max && v_par < v_line {
            v_par
        } else if v_line < v_max {
            v_line
        } else {
            v_max
        };
        let jump = &self.states[2] + d1 * (v / n1);
        self.states.clear();
        self.errors.clear();
        self.aligned_before = false;
        Some(jump)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_jumps_to_the_line_root() {
        // error falls linearly along x: e = 10 − x, zero at x = 10
        let mut ex = Extrapolator::default();
        let mut out = None;
        for x in [0.0, 1.0, 2.0, 3.0] {
            out = ex.push(DVector::from_vec(vec![x, 0.0]), 10.0 - x);
        }
        let jump = out.expect("aligned steps extrapolate");
        assert!((jump[0] - 10.0).abs() < 1e-12 && jump[1] == 0.0);
    }

    #[test]
    fn turning_path_does_not_jump() {
        let mut ex = Extrapolator::default();
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        for (k, p) in pts.iter().enumerate() {
            assert!(ex
                .push(DVector::from_row_slice(p), 4.0 - k as f64)
                .is_none());
        }
    }

    fn run(errors: impl Fn(f64) -> f64) -> f64 {
        let mut ex = Extrapolator::default();
        let mut out = None;
        for x in [0.0, 1.0, 2.0, 3.0] {
            out = ex.push(DVector::from_vec(vec![x]), errors(x));
        }
        out.expect("aligned steps extrapolate")[0]
    }

    #[test]
    fn nearer_of_parabola_minimum_and_line_root() {
        // minimum at 3.5, line root from the last step at 8.125
        assert!((run(|x| (x - 3.5) * (x - 3.5) + 10.0) - 3.5).abs() < 1e-12);
        // minimum at 5, line root at 4
        assert!((run(|x| (x - 5.0) * (x - 5.0) + 1.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn jump_is_capped() {
        assert!((run(|x| 1e6 - x) - (3.0 + 25.0)).abs() < 1e-9);
    }
}
