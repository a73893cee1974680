use proptest::prelude::*;
use seedbank::dual::{simulate_dual, DualConfig, Role};
use seedbank::forward::{default_dt, first_moment_oracle, Scheme, StepConfig, Stepper, SystemState};
use seedbank::params::{Family, InitSpec, ModelParams};
use seedbank::rng::stream;
use seedbank::DiffusionFn;

fn params(n: usize, levels: usize, k: f64, e: f64, c: f64, d: f64) -> ModelParams {
    ModelParams::from_family(n, levels, Family::Exponential { k, e, c }, DiffusionFn::fisher_wright(d).unwrap(), InitSpec::constant(0.5))
        .unwrap()
}

fn arb_model() -> impl Strategy<Value = ModelParams> {
    (2usize..4, 0usize..3, 0.3f64..1.5, 0.3f64..1.0, 0.2f64..1.0, 0.0f64..2.0)
        .prop_map(|(n, l, k, e, c, d)| params(n, l, k, e, c, d))
}

fn arb_state(p: ModelParams) -> impl Strategy<Value = (ModelParams, SystemState)> {
    let cols = p.colonies();
    let colours = p.levels + 1;
    (prop::collection::vec(0.0f64..=1.0, cols), prop::collection::vec(0.0f64..=1.0, cols * colours)).prop_map(move |(x, y)| {
        let s = SystemState::explicit(&p, x, y).unwrap();
        (p.clone(), s)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_stays_in_unit_cube((p, mut s) in arb_model().prop_flat_map(arb_state), seed in any::<u64>(), scheme in 0usize..3) {
        let scheme = [Scheme::ExactDormant, Scheme::ExactLinear, Scheme::Euler][scheme];
        let mut stepper = Stepper::new(&p, StepConfig { dt: default_dt(&p), scheme }).unwrap();
        let mut rng = stream(seed, "invariants", 0, 0);
        for _ in 0..50 {
            stepper.step(&mut s, &mut rng);
        }
        prop_assert!(s.x.iter().chain(&s.y).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn oracle_conserves_weighted_grand_mean((p, z) in arb_model().prop_flat_map(arb_state), t in 0.0f64..5.0) {
        let out = first_moment_oracle(&p, &z, t).unwrap();
        prop_assert!((out.grand_mean(&p.k) - z.grand_mean(&p.k)).abs() < 1e-9);
        prop_assert!(out.x.iter().chain(&out.y).all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
    }

    #[test]
    fn dual_lineages_never_multiply(p in arb_model(), count in 1u32..6, seed in any::<u64>(), horizon in 0.1f64..5.0) {
        let l = DualConfig::new().with(0, Role::Active, count);
        let run = simulate_dual(&l, &p, horizon, &mut stream(seed, "invariants", 0, 0));
        let coalesced = run.events.iter().filter(|e| e.event == "coalesce").count() as u32;
        prop_assert_eq!(run.terminal.total() + coalesced, count);
        if p.fisher_wright_rate() == Some(0.0) {
            prop_assert_eq!(coalesced, 0);
        }
    }
}
