//! Randomized invariants of the information-theoretic kernels.

use hsac::dist::{conditional_entropy, entropy, marginal_action_dist, mutual_information, CategoricalDist, PolicyTable};
use proptest::prelude::*;

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, k).prop_filter_map("all-zero weights", |raw| {
        let z: f64 = raw.iter().sum();
        (z > 1e-3).then(|| raw.into_iter().map(|x| x / z).collect())
    })
}

fn policy_table() -> impl Strategy<Value = PolicyTable> {
    (1usize..6, 2usize..5).prop_flat_map(|(g, a)| {
        (simplex(g), prop::collection::vec(simplex(a), g)).prop_map(|(w, rows)| {
            PolicyTable::new(CategoricalDist::new(w).unwrap(), rows.into_iter().map(|r| CategoricalDist::new(r).unwrap()).collect()).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn mutual_information_is_bounded(t in policy_table()) {
        let mi = mutual_information(&t);
        let bound = entropy(&marginal_action_dist(&t)).min(entropy(&t.goal_dist));
        prop_assert!(mi >= -1e-9, "I = {mi}");
        prop_assert!(mi <= bound + 1e-9, "I = {mi} > {bound}");
    }

    #[test]
    fn goal_blind_rows_carry_no_information(w in simplex(4), row in simplex(3)) {
        let rows = vec![CategoricalDist::new(row).unwrap(); 4];
        let t = PolicyTable::new(CategoricalDist::new(w).unwrap(), rows).unwrap();
        prop_assert!(mutual_information(&t).abs() < 1e-12);
    }

    #[test]
    fn conditioning_never_raises_entropy(t in policy_table()) {
        prop_assert!(conditional_entropy(&t) <= entropy(&marginal_action_dist(&t)) + 1e-12);
    }

    #[test]
    fn entropy_is_concave(p in simplex(5), q in simplex(5), lambda in 0.0f64..1.0) {
        let mix: Vec<f64> = p.iter().zip(&q).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        let hp = entropy(&CategoricalDist::new(p).unwrap());
        let hq = entropy(&CategoricalDist::new(q).unwrap());
        let hm = entropy(&CategoricalDist::new(mix).unwrap());
        prop_assert!(hm >= lambda * hp + (1.0 - lambda) * hq - 1e-12);
    }

    #[test]
    fn entropy_lies_between_zero_and_log_k(p in simplex(6)) {
        let h = entropy(&CategoricalDist::new(p).unwrap());
        prop_assert!((-1e-15..=6f64.ln() + 1e-12).contains(&h));
    }
}
