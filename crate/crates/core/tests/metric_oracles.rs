mod oracles;

use oracles::{fisher_by_enumeration, pass_at_k_by_enumeration};
use proptest::prelude::*;
use seccode::metrics::{
    fisher_exact_2x2, invalid_ratio, mean_pass_at_k, pass_at_k, percent, percent2, secure_ratio, valid_ratio, Counts,
    TaskResult,
};

#[test]
fn pass_at_1_is_the_success_fraction() {
    for n in 1..=100u64 {
        for c in 0..=n {
            assert_eq!(pass_at_k(n, c, 1).unwrap(), c as f64 / n as f64, "n={n} c={c}");
        }
    }
}

#[test]
fn pass_at_k_matches_draw_enumeration() {
    for n in 1..=12u32 {
        for c in 0..=n {
            for k in 1..=n {
                let got = pass_at_k(n.into(), c.into(), k.into()).unwrap();
                let want = pass_at_k_by_enumeration(n, c, k);
                assert!((got - want).abs() <= 1e-12, "n={n} c={c} k={k}: {got} vs {want}");
            }
        }
    }
}

#[test]
fn pass_at_k_worked_example() {
    assert!((pass_at_k(5, 2, 3).unwrap() - 0.9).abs() < 1e-12);
    assert!(pass_at_k(3, 4, 1).is_err());
    assert!(pass_at_k(3, 1, 4).is_err());
    assert!(pass_at_k(3, 1, 0).is_err());
}

proptest! {
    #[test]
    fn pass_at_k_is_monotone(n in 1u64..200, c_frac in 0.0f64..1.0, k_frac in 0.0f64..1.0) {
        let c = ((n as f64) * c_frac) as u64;
        let k = 1 + ((n - 1) as f64 * k_frac) as u64;
        let p = pass_at_k(n, c, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        if c < n {
            prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= p);
        }
        if k < n {
            prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= p);
        }
    }
}

/// Per-task tables with n = 10 whose mean pass@1 is exactly `total / 10000`.
fn synthetic_tasks(total_correct: u64) -> Vec<TaskResult> {
    (0..1000)
        .map(|i| TaskResult {
            task_id: format!("task/{i}"),
            n: 10,
            c: (total_correct / 1000) + u64::from(i < total_correct % 1000),
        })
        .collect()
}

#[test]
fn pass_at_1_rendering() {
    assert_eq!(percent2(mean_pass_at_k(&synthetic_tasks(993), 1).unwrap()), "9.93%");
    assert_eq!(percent2(mean_pass_at_k(&synthetic_tasks(1195), 1).unwrap()), "11.95%");
}

#[test]
fn fisher_matches_enumeration_up_to_20() {
    let mut tables = 0;
    for n in 1..=20u64 {
        for a in 0..=n {
            for b in 0..=n - a {
                for c in 0..=n - a - b {
                    let d = n - a - b - c;
                    let got = fisher_exact_2x2(a, b, c, d).unwrap();
                    let want = fisher_by_enumeration(a, b, c, d);
                    assert!((got - want).abs() <= 1e-9, "[[{a},{b}],[{c},{d}]]: {got} vs {want}");
                    tables += 1;
                }
            }
        }
    }
    assert_eq!(tables, 10625);
}

#[test]
fn fisher_worked_examples() {
    assert!((fisher_exact_2x2(2, 0, 0, 2).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert!((fisher_exact_2x2(1, 9, 9, 1).unwrap() - 202.0 / 184756.0).abs() < 1e-12);
    assert!(fisher_exact_2x2(0, 0, 0, 0).is_err());
}

#[test]
fn published_tallies() {
    let c = Counts::new(292, 416, 72);
    assert_eq!(percent(secure_ratio(&c).unwrap()), "58.8%");
    assert_eq!(percent(invalid_ratio(&c).unwrap()), "9.2%");
    let c = Counts::new(220, 365, 195);
    assert_eq!(percent(secure_ratio(&c).unwrap()), "62.4%");
    assert_eq!(percent(invalid_ratio(&c).unwrap()), "25.0%");
    assert_eq!(c.total(), 780);
}

proptest! {
    #[test]
    fn ratios_are_scale_invariant_and_conserve(v in 0u64..500, s in 0u64..500, i in 0u64..500, k in 1u64..50) {
        prop_assume!(v + s > 0);
        let c = Counts::new(v, s, i);
        let scaled = Counts::new(v * k, s * k, i * k);
        prop_assert!((secure_ratio(&c).unwrap() - secure_ratio(&scaled).unwrap()).abs() < 1e-12);
        prop_assert!((invalid_ratio(&c).unwrap() - invalid_ratio(&scaled).unwrap()).abs() < 1e-12);
        prop_assert!((valid_ratio(&c).unwrap() + invalid_ratio(&c).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(c.valid() + c.invalid, c.total());
    }
}
