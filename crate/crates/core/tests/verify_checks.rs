use fcbf_core::constraints::ControllerKind;
use fcbf_core::sim::{run, ScenarioConfig};
use fcbf_core::verify::{
    compare_controllers, fd_check_row, run_deriv_suite, CheckContext, ClfFcbfRate, ClfHocbfRate, FcbfRowRate,
    HocbfRowRate, Psi0Rate, RateCheck, FD_THRESHOLD,
};
use proptest::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[test]
fn derivative_suite_at_500_samples() {
    for r in run_deriv_suite(&CheckContext::default(), 500, 11) {
        assert!(r.samples >= 500);
        assert!(r.pass, "{} {:e} at {:?}", r.operation, r.max_rel_error, r.worst_sample);
        assert_eq!(r.threshold, FD_THRESHOLD);
    }
}

#[test]
fn each_tampered_row_is_caught() {
    let ctx = CheckContext::default();
    let tampered: [&dyn RateCheck; 5] = [
        &Psi0Rate { tamper: true },
        &HocbfRowRate { tamper: true },
        &FcbfRowRate { tamper: true },
        &ClfFcbfRate { tamper: true },
        &ClfHocbfRate { tamper: true },
    ];
    for c in tampered {
        let r = fd_check_row(c, &ctx, 100, 5);
        assert!(!r.pass, "{} {:e}", r.operation, r.max_rel_error);
    }
}

#[test]
fn derivative_suite_with_moved_obstacle() {
    let mut ctx = CheckContext::default();
    ctx.params.obstacle_x = 0.7;
    ctx.params.obstacle_y = -0.4;
    ctx.params.obstacle_r = 0.6;
    ctx.params.goal_y = 1.0;
    for r in run_deriv_suite(&ctx, 200, 3) {
        assert!(r.pass, "{} {:e}", r.operation, r.max_rel_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn comparison_ignores_insertion_order(theta in PI / 12.0..PI / 4.0) {
        let mut logs = Vec::new();
        for kind in [ControllerKind::Hocbf, ControllerKind::SpHocbf] {
            let mut c = ScenarioConfig::paper(kind);
            c.initial_state.theta = theta;
            logs.push((kind.to_string(), run(&c).unwrap()));
        }
        let forward: BTreeMap<_, _> = logs.iter().cloned().collect();
        let backward: BTreeMap<_, _> = logs.iter().rev().cloned().collect();
        let (a, b) = (compare_controllers(&forward), compare_controllers(&backward));
        prop_assert_eq!(&a, &b);
        let d = a.delta("hocbf", "sp-hocbf").unwrap();
        let e = a.delta("sp-hocbf", "hocbf").unwrap();
        prop_assert_eq!(d.min_b, -e.min_b);
        prop_assert_eq!(d.max_rate[0], -e.max_rate[0]);
    }
}
