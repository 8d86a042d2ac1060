//! Model-based regulation and tracking, the closed-loop harness and the
//! multiplicative-factor consistency analysis.

mod closed_loop;
mod consistency;
mod laws;

pub use closed_loop::{closed_loop, ClosedLoopConfig, ClosedLoopRun};
pub use consistency::{estimate_p, ConsistencyReport, ConsistencySample};
pub use laws::{
    pseudo_inverse, regulation_control, tracking_control, Controller, GainSchedule, RefPoint, ReferenceSignal,
    Regulator, Tracker, RANK_TOLERANCE,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::{Error, Result};
    use crate::mechanics::{MechanicalModel, Mechanics, Scaled};
    use crate::plants::Plant;
    use nalgebra::DMatrix;

    /// Constant quadruple with a linear mass `m0 + m1·q` (one coordinate).
    struct Fixed {
        m0: f64,
        m1: f64,
        g: f64,
        d: f64,
        a: Vec<f64>,
        inputs: usize,
    }

    impl MechanicalModel for Fixed {
        fn dof(&self) -> usize {
            self.a.len() / self.inputs
        }
        fn input_dim(&self) -> usize {
            self.inputs
        }
        fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
            let n = self.dof();
            let mut mass = vec![0.0; n * n];
            let mut damping = vec![0.0; n * n];
            for i in 0..n {
                mass[i * n + i] = self.m0 + self.m1 * q[0];
                damping[i * n + i] = self.d;
            }
            let mut jac = vec![vec![0.0; n * n]; n];
            for i in 0..n {
                jac[0][i * n + i] = self.m1;
            }
            Mechanics::from_mass(n, self.inputs, mass, jac, 0.0, vec![self.g; n], damping, self.a.clone())
        }
    }

    fn scalar(a: f64, g: f64) -> Fixed {
        Fixed {
            m0: 2.0,
            m1: 0.0,
            g,
            d: 0.0,
            a: vec![a],
            inputs: 1,
        }
    }

    #[test]
    fn regulation_scalar_example() {
        let gains = GainSchedule::uniform(1, 10.0, 50.0).unwrap();
        let u = regulation_control(&scalar(2.0, 3.0), &[0.0], &[0.2], &[0.1], &gains).unwrap();
        assert!((u[0] + 16.5).abs() < 1e-12, "{u:?}");
        let at_rest = regulation_control(&scalar(2.0, 3.0), &[0.4], &[0.0], &[0.4], &gains).unwrap();
        assert!((at_rest[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rank_deficient_input_is_rejected() {
        let model = Fixed {
            m0: 1.0,
            m1: 0.0,
            g: 1.0,
            d: 0.0,
            a: vec![1.0, 2.0, 2.0, 4.0],
            inputs: 2,
        };
        let gains = GainSchedule::uniform(2, 1.0, 1.0).unwrap();
        let err = regulation_control(&model, &[0.0; 2], &[0.0; 2], &[0.0; 2], &gains).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }), "{err:?}");
        let r = RefPoint {
            q: vec![0.0; 2],
            qd: vec![0.0; 2],
            qdd: vec![0.0; 2],
        };
        assert!(matches!(tracking_control(&model, &[0.0; 2], &[0.0; 2], &r, &gains), Err(Error::SingularInput)));
    }

    #[test]
    fn pseudo_inverse_of_tall_matrix() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let p = pseudo_inverse(&a).unwrap();
        assert!((p * &a - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn tracking_scalar_example() {
        // C·q̇_ref = ½·M'·q̇_ref² = 0.5 with M' = 1, q̇_ref = 1
        let model = Fixed {
            m0: 2.0,
            m1: 1.0,
            g: 1.0,
            d: 0.3,
            a: vec![2.0],
            inputs: 1,
        };
        let r = RefPoint {
            q: vec![0.0],
            qd: vec![1.0],
            qdd: vec![1.0],
        };
        let gains = GainSchedule::uniform(1, 10.0, 50.0).unwrap();
        let u = tracking_control(&model, &[0.0], &[1.0], &r, &gains).unwrap();
        assert!((u[0] - 1.9).abs() < 1e-12, "{u:?}");
    }

    #[test]
    fn static_tracking_reduces_to_regulation() {
        let plant = Plant::by_name("two_link_arm").unwrap();
        let gains = GainSchedule::uniform(2, 10.0, 50.0).unwrap();
        let (q, qd, q_ref) = ([0.3, -0.2], [0.1, 0.4], [0.5, 0.1]);
        let r = ReferenceSignal::Constant { q: q_ref.to_vec() }.at(1.0);
        let reg = regulation_control(&plant, &q, &qd, &q_ref, &gains).unwrap();
        // feedforward is evaluated at the reference, so compare against it there
        let tr = tracking_control(&plant, &q, &qd, &r, &gains).unwrap();
        let mech = plant.mechanics(&q).unwrap();
        let a = mech.input_matrix();
        let g_ref = plant.mechanics(&q_ref).unwrap().gravity();
        let g_q = mech.gravity();
        let shift = a.clone().lu().solve(&(g_ref - g_q)).unwrap();
        for i in 0..2 {
            assert!((tr[i] - reg[i] - shift[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gain_parsing_and_broadcast() {
        let g: GainSchedule = "10,50".parse().unwrap();
        assert_eq!(g.broadcast(3).unwrap(), GainSchedule::uniform(3, 10.0, 50.0).unwrap());
        let h: GainSchedule = "1,2;3,4".parse().unwrap();
        assert_eq!((h.kp, h.kd), (vec![1.0, 2.0], vec![3.0, 4.0]));
        assert!("10".parse::<GainSchedule>().is_err());
        assert!("10,-1".parse::<GainSchedule>().is_err());
        assert!("a,b".parse::<GainSchedule>().is_err());
        assert!(GainSchedule::uniform(2, 1.0, 1.0).unwrap().broadcast(3).is_err());
        assert_eq!(GainSchedule::panda().dof(), 7);
        GainSchedule::panda().validate().unwrap();
    }

    #[test]
    fn reference_derivatives_match_differences() {
        let r = ReferenceSignal::Sinusoid {
            center: vec![0.1, -0.2],
            amplitude: vec![0.5, 0.3],
            frequency: vec![0.4, 0.25],
            phase: vec![0.0, 1.0],
        };
        r.validate().unwrap();
        let h = 1e-5;
        let (a, b, c) = (r.at(0.7 - h), r.at(0.7), r.at(0.7 + h));
        for i in 0..2 {
            assert!(((c.q[i] - a.q[i]) / (2.0 * h) - b.qd[i]).abs() < 1e-8);
            assert!(((c.qd[i] - a.qd[i]) / (2.0 * h) - b.qdd[i]).abs() < 1e-8);
        }
    }

    fn arm() -> Plant {
        Plant::by_name("two_link_arm").unwrap()
    }

    #[test]
    fn gravity_compensation_holds_equilibrium() {
        let plant = arm();
        let q0 = [0.4, -0.3];
        let ctl = Regulator {
            model: arm(),
            q_ref: q0.to_vec(),
            gains: GainSchedule::feedforward_only(2),
        };
        let run = closed_loop(&plant, &ctl, &[q0[0], q0[1], 0.0, 0.0], &ClosedLoopConfig::new(2.0, 1e-3)).unwrap();
        assert!(run.error_inf().iter().all(|e| *e < 1e-12));
    }

    #[test]
    fn saturation_is_logged_and_bounds_inputs() {
        let plant = arm();
        let ctl = Regulator {
            model: arm(),
            q_ref: vec![1.0, 0.5],
            gains: GainSchedule::uniform(2, 100.0, 20.0).unwrap(),
        };
        let mut cfg = ClosedLoopConfig::new(1.0, 1e-3);
        cfg.saturation = Some(vec![5.0]);
        let run = closed_loop(&plant, &ctl, &[0.0; 4], &cfg).unwrap();
        assert!(run.clip_events() > 0);
        assert!(run.u.iter().flatten().all(|u| u.abs() <= 5.0));
        let mut csv = Vec::new();
        run.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,q0,q1,q_ref0,q_ref1,u0,u1,clipped\n"));
        assert_eq!(text.lines().count(), run.t.len() + 1);
    }

    #[test]
    fn control_rate_decimation_holds_inputs() {
        let plant = arm();
        let ctl = Regulator {
            model: arm(),
            q_ref: vec![0.2, 0.1],
            gains: GainSchedule::uniform(2, 10.0, 5.0).unwrap(),
        };
        let mut cfg = ClosedLoopConfig::new(0.1, 1e-3);
        cfg.control_dt = Some(1e-2);
        let run = closed_loop(&plant, &ctl, &[0.0; 4], &cfg).unwrap();
        for k in 0..100 {
            assert_eq!(run.u[k], run.u[k - k % 10]);
        }
        assert_ne!(run.u[0], run.u[10]);
        cfg.control_dt = Some(1.5e-3);
        assert!(closed_loop(&plant, &ctl, &[0.0; 4], &cfg).is_err());
    }

    #[test]
    fn scaled_model_with_rescaled_gains_reproduces_the_loop() {
        let c = 2.0;
        let gains = GainSchedule::uniform(2, 10.0, 50.0).unwrap();
        let cfg = ClosedLoopConfig::new(2.0, 1e-3);
        let x0 = [0.0, 0.0, 0.1, -0.2];
        let base = Regulator {
            model: arm(),
            q_ref: vec![0.5, -0.4],
            gains: gains.clone(),
        };
        let scaled = Regulator {
            model: Scaled::new(arm(), c).unwrap(),
            q_ref: vec![0.5, -0.4],
            gains: gains.scaled(1.0 / c),
        };
        let a = closed_loop(&arm(), &base, &x0, &cfg).unwrap();
        let b = closed_loop(&arm(), &scaled, &x0, &cfg).unwrap();
        for (x, y) in a.q.iter().flatten().zip(b.q.iter().flatten()) {
            assert!((x - y).abs() < 1e-8);
        }
        // same gains on the scaled model change the control
        let u0 = regulation_control(&Scaled::new(arm(), c).unwrap(), &[0.0; 2], &[0.1, -0.2], &[0.5, -0.4], &gains).unwrap();
        assert!((u0[0] - a.u[0][0]).abs() > 1e-3);
    }

    #[test]
    fn consistency_of_exact_and_scaled_models() {
        let plant = arm();
        let grid: Vec<Vec<f64>> = (0..9).map(|k| vec![-1.0 + 0.25 * k as f64, 0.8 - 0.2 * k as f64]).collect();
        let exact = estimate_p(&arm(), &plant, &grid).unwrap();
        let doubled = estimate_p(&Scaled::new(arm(), 2.0).unwrap(), &plant, &grid).unwrap();
        for (report, c) in [(&exact, 1.0), (&doubled, 2.0)] {
            assert!(report.all_definite && report.all_small);
            for s in &report.samples {
                let p = DMatrix::from_row_slice(2, 2, &s.p);
                assert!((p - DMatrix::identity(2, 2) * c).amax() < 1e-12);
                assert!(s.residual_g < 1e-12 && s.residual_a < 1e-12 && s.residual_d < 1e-12);
            }
        }
        assert!(exact.samples.iter().all(|s| s.smallness_norm.unwrap() < 1e-12));
    }

    /// Slowest decay rate of the loop linearised at `q_ref` (perfect gravity
    /// compensation) and a step small enough that holding the input over it
    /// does not eat the damping of any mode.
    fn linear_rates(q_ref: &[f64], gains: &GainSchedule) -> (f64, f64) {
        let mech = arm().mechanics(q_ref).unwrap();
        let a = mech.input_matrix();
        let aat = &a * a.transpose();
        let kp = &aat * DMatrix::from_diagonal(&gains.kp.clone().into());
        let kd = &aat * DMatrix::from_diagonal(&gains.kd.clone().into()) + mech.damping_matrix();
        let m_inv = mech.mass_matrix().try_inverse().unwrap();
        let mut sys = DMatrix::zeros(4, 4);
        sys.view_mut((0, 2), (2, 2)).fill_with_identity();
        sys.view_mut((2, 0), (2, 2)).copy_from(&(-&m_inv * kp));
        sys.view_mut((2, 2), (2, 2)).copy_from(&(-&m_inv * kd));
        let eig = sys.complex_eigenvalues();
        let slow = eig.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
        let dt = eig
            .iter()
            .map(|z| {
                let r2 = z.norm_sqr();
                if z.im.abs() > 0.0 {
                    (0.25 / r2.sqrt()).min(0.2 * -z.re / r2)
                } else {
                    0.25 / r2.sqrt()
                }
            })
            .fold(1e-2, f64::min);
        (slow, dt)
    }

    #[test]
    fn perfect_regulation_converges_across_gain_decades() {
        let q_ref = vec![0.6, -0.5];
        let decades = [1.0, 10.0, 100.0, 1000.0];
        for &kp in &decades {
            // keep K_D/K_P ≤ 10 so the slow mode settles in simulated minutes
            for &kd in decades.iter().filter(|&&kd| kd <= 10.0 * kp) {
                let gains = GainSchedule::uniform(2, kp, kd).unwrap();
                let (slow, dt) = linear_rates(&q_ref, &gains);
                assert!(slow > 0.0);
                let duration = 8.0 / slow;
                let ctl = Regulator {
                    model: arm(),
                    q_ref: q_ref.clone(),
                    gains,
                };
                let run = closed_loop(&arm(), &ctl, &[0.0; 4], &ClosedLoopConfig::new(duration, dt)).unwrap();
                let err = *run.error_inf().last().unwrap();
                assert!(err < 1e-2, "kp {kp} kd {kd}: {err}");
            }
        }
    }

    fn tracking_rmse(scale: f64) -> f64 {
        let reference = ReferenceSignal::Sinusoid {
            center: vec![0.2, 0.3],
            amplitude: vec![0.5, 0.4],
            frequency: vec![0.5, 0.3],
            phase: vec![0.0, 0.5],
        };
        let ctl = Tracker {
            model: arm(),
            reference: reference.clone(),
            gains: GainSchedule::uniform(2, 10.0, 50.0).unwrap().scaled(scale),
        };
        let r0 = reference.at(0.0);
        let x0 = [r0.q[0], r0.q[1], r0.qd[0], r0.qd[1]];
        let run = closed_loop(&arm(), &ctl, &x0, &ClosedLoopConfig::new(5.0, 1e-4)).unwrap();
        let e = run.error_inf();
        (e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt()
    }

    #[test]
    fn tracking_error_shrinks_with_gains() {
        let errors: Vec<f64> = [1.0, 10.0].iter().map(|&s| tracking_rmse(s)).collect();
        assert!(errors[0] < 1e-3, "{errors:?}");
        assert!(errors[1] <= errors[0] / 10.0 * 1.1, "{errors:?}");
    }
}
