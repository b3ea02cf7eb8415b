use std::collections::BTreeMap;

use cfa_core::data::{
    self, partition, synthesize_covariates, Column, ColumnDistribution, ColumnKind, CovariateTable, SampleId, Split,
};
use cfa_core::simulate::*;

fn table(n: usize, seed: u64) -> CovariateTable {
    synthesize_covariates(n, &data::ihdp_like_columns(), seed).unwrap()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn partition_sizes_follow_the_fractions() {
    let r = simulate(&table(100, 1), &SimulationConfig::default(), 1).unwrap();
    let p = partition(r.world.samples(), 0.05, 0.2, 3).unwrap();
    assert_eq!((p.train().len(), p.test().len(), p.pool().len()), (5, 20, 75));
    assert_eq!(p, partition(r.world.samples(), 0.05, 0.2, 3).unwrap());
}

#[test]
fn partition_rejects_bad_fractions() {
    let r = simulate(&table(50, 1), &SimulationConfig::default(), 1).unwrap();
    for (l, t) in [(0.0, 0.2), (0.5, 0.5), (0.1, 1.0), (0.001, 0.2)] {
        assert!(partition(r.world.samples(), l, t, 0).is_err(), "{l} {t}");
    }
}

#[test]
fn default_split_masks_the_pool_by_score() {
    let n = 747;
    let cfg = SimulationConfig::default();
    let r = simulate(&table(n, 4), &cfg, 4).unwrap();
    let p = &r.partition;
    let test = (0.25 * n as f64).round() as usize;
    assert_eq!(p.test().len(), test);
    assert_eq!(p.train().len() + p.pool().len() + test, n);
    // Without test units, 95% of the rest is masked.
    assert_eq!(p.pool().len(), masked_count(n - test, 0.95));
    for s in r.world.samples() {
        assert!(p.split_of(s.id()).is_some());
    }
}

#[test]
fn treatment_clip_examples() {
    assert_eq!(clip_probability(1.7, 0.005, 0.995), 0.995);
    assert_eq!(clip_probability(-3.0, 0.005, 0.995), 0.005);
    let t = table(200, 2);
    let cols: Vec<String> = t.columns().iter().map(|c| c.name.clone()).collect();
    let zero = TreatmentParams::new(cols.clone(), vec![0.0; cols.len()]).unwrap();
    assert!(treatment_probabilities(&t, &zero).unwrap().iter().all(|p| *p == 0.005));
    let (normed, _) = data::normalize(&t).unwrap();
    let drawn = TreatmentParams::drawn(cols, 0.2, 9).unwrap();
    assert!(drawn.xi.iter().all(|x| (0.0..=0.2).contains(x)));
    assert!(treatment_probabilities(&normed, &drawn)
        .unwrap()
        .iter()
        .all(|p| (0.005..=0.995).contains(p)));
}

#[test]
fn coefficient_frequencies() {
    // 10000 continuous coefficients: about half are zero. Binary columns
    // draw from the same support with zero at 0.6.
    let mut cols = Vec::new();
    let mut values = Vec::new();
    let named = default_named_beta();
    for name in named.keys() {
        cols.push(Column::new(name.clone(), ColumnKind::Binary));
    }
    let n_cont = 100;
    for i in 0..n_cont {
        cols.push(Column::new(format!("c{i}"), ColumnKind::Continuous));
    }
    let n_rows = 3;
    for r in 0..n_rows {
        for c in &cols {
            values.push(match c.kind {
                ColumnKind::Binary => (r % 2) as f64,
                ColumnKind::Continuous => r as f64,
            });
        }
    }
    let t = CovariateTable::new(cols, (0..n_rows).map(|i| i.to_string()).collect(), values).unwrap();
    let mut zeros = 0;
    let mut total = 0;
    for seed in 0..100 {
        let s = sample_outcome_surface(&t, &named, 1.0, seed).unwrap();
        for (name, (b, w)) in s.columns.iter().zip(s.beta.iter().zip(&s.w_offset)) {
            if let Some(v) = named.get(name) {
                assert_eq!((*b, *w), (*v, 0.0));
            } else {
                assert_eq!(*w, 0.5);
                assert!([0.0, 0.1, 0.2, 0.3, 0.4].contains(b));
                total += 1;
                zeros += (*b == 0.0) as usize;
            }
        }
    }
    assert_eq!(total, 10000);
    assert!((zeros as f64 / total as f64 - 0.5).abs() < 0.02);
}

#[test]
fn binary_coefficients_stay_on_the_support() {
    let mut named = default_named_beta();
    let mut cols: Vec<ColumnDistribution> = named
        .keys()
        .map(|n| ColumnDistribution::Bernoulli { name: n.clone(), p: 0.5 })
        .collect();
    for i in 0..30 {
        cols.push(ColumnDistribution::Bernoulli { name: format!("b{i}"), p: 0.3 });
    }
    let t = synthesize_covariates(50, &cols, 1).unwrap();
    named.insert("cig".into(), 0.25);
    let s = sample_outcome_surface(&t, &named, 1.0, 5).unwrap();
    let cig = s.columns.iter().position(|c| c == "cig").unwrap();
    assert_eq!((s.beta[cig], s.w_offset[cig]), (0.25, 0.0));
    let mut zeros = 0;
    for (c, b) in s.columns.iter().zip(&s.beta) {
        if !named.contains_key(c) {
            assert!([0.0, 0.1, 0.2, 0.3, 0.4].contains(b));
            zeros += (*b == 0.0) as usize;
        }
    }
    assert!(zeros > 0);
}

#[test]
fn outcome_means_follow_the_surface() {
    let t = table(40, 3);
    let (t, _) = data::normalize(&t).unwrap();
    let s = sample_outcome_surface(&t, &default_named_beta(), 1.0, 3).unwrap();
    let treat = vec![true; t.n_samples()];
    let out = generate_outcomes(&t, &treat, &s, 3).unwrap();
    for (r, o) in out.iter().enumerate() {
        let lp: f64 = (0..t.n_columns()).map(|c| (t.get(r, c) + s.w_offset[c]) * s.beta[c]).sum();
        assert!((o.y1_true - lp).abs() < 1e-12);
        assert!((o.y0_true - lp.exp()).abs() < 1e-9 * lp.exp().max(1.0));
    }
}

#[test]
fn mask_without_noise_takes_a0_first() {
    for seed in 0..10 {
        let r = simulate(&table(300, seed), &SimulationConfig::default(), seed).unwrap();
        let a: BTreeMap<SampleId, bool> = r.world.truth_rows().map(|t| (t.id, t.a)).collect();
        let n_a0 = a.values().filter(|v| !**v).count();
        for frac in [0.2, 0.5, 0.95] {
            let masked = apply_mnar_mask_with(r.world.samples(), frac, MaskNoise::Disabled, seed).unwrap();
            assert_eq!(masked.len(), masked_count(300, frac));
            let masked_a1 = masked.iter().filter(|id| a[id]).count();
            let masked_a0 = masked.len() - masked_a1;
            // Every A = 0 unit (score 0.4) goes before any A = 1 unit (0.2).
            assert!(masked_a1 == 0 || masked_a0 == n_a0, "seed {seed} frac {frac}");
        }
    }
}

#[test]
fn masked_count_examples() {
    let r = simulate(&table(100, 1), &SimulationConfig::default(), 1).unwrap();
    assert_eq!(apply_mnar_mask(r.world.samples(), 0.95, 1).unwrap().len(), 95);
    assert!(apply_mnar_mask(r.world.samples(), 0.0, 1).unwrap().is_empty());
    assert!(apply_mnar_mask(r.world.samples(), 1.5, 1).is_err());
}

#[test]
fn mnar_masks_a0_more_often_over_seeds() {
    let (mut m0, mut n0, mut m1, mut n1) = (0usize, 0usize, 0usize, 0usize);
    for seed in 0..100 {
        let r = simulate(&table(200, seed), &SimulationConfig::default(), seed).unwrap();
        let masked = apply_mnar_mask(r.world.samples(), 0.5, seed).unwrap();
        for row in r.world.truth_rows() {
            let hit = masked.contains(&row.id) as usize;
            if row.a {
                m1 += hit;
                n1 += 1;
            } else {
                m0 += hit;
                n0 += 1;
            }
        }
    }
    let (r0, r1) = (m0 as f64 / n0 as f64, m1 as f64 / n1 as f64);
    assert!(r0 > r1, "A=0 rate {r0} vs A=1 rate {r1}");
}

#[test]
fn retain_everything_keeps_a() {
    let t = table(500, 8);
    let idx = t.column_index("momwhite").unwrap();
    let d = apply_a_variant(&t, "momwhite", &AVariant::OriginalFraction { retain_fraction: 1.0 }, 8).unwrap();
    assert_eq!(d.a, t.column_values(idx));
}

#[test]
fn permuted_variant_keeps_the_counts() {
    let t = table(500, 8);
    let idx = t.column_index("momwhite").unwrap();
    let d = apply_a_variant(&t, "momwhite", &AVariant::IndependentPermuted, 8).unwrap();
    let ones = |v: &[f64]| v.iter().filter(|x| **x == 1.0).count();
    assert_eq!(ones(&d.a), ones(&t.column_values(idx)));
    assert_ne!(d.a, t.column_values(idx));
}

#[test]
fn bivariate_correlations() {
    let n = 20000;
    let t = table(n, 11);
    let a_idx = t.column_index("momwhite").unwrap();
    let target_ones = t.column_values(a_idx).iter().filter(|v| **v == 1.0).count();
    let mut biserial = Vec::new();
    for rho in [0.0, 0.4, 0.8] {
        let v = AVariant::BivariateGaussian {
            rho,
            birthweight_column: "bw".into(),
        };
        let d = apply_a_variant(&t, "momwhite", &v, 11).unwrap();
        let z = d.latent.unwrap();
        let (b_idx, b) = d.birthweight.unwrap();
        assert_eq!(b_idx, t.column_index("bw").unwrap());
        assert!((corr(&z, &b) - rho).abs() < 0.03, "rho {rho}: {}", corr(&z, &b));
        let ones = d.a.iter().filter(|v| **v == 1.0).count();
        assert!((ones as f64 - target_ones as f64).abs() <= 1.0);
        biserial.push(corr(&d.a, &b));
    }
    assert!(biserial[0] < biserial[1] && biserial[1] < biserial[2], "{biserial:?}");
}

#[test]
fn bad_variant_parameters() {
    let t = table(50, 1);
    for v in [
        AVariant::OriginalFraction { retain_fraction: 1.5 },
        AVariant::BivariateGaussian { rho: -0.1, birthweight_column: "bw".into() },
        AVariant::BivariateGaussian { rho: 0.5, birthweight_column: "nope".into() },
    ] {
        assert!(apply_a_variant(&t, "momwhite", &v, 0).is_err(), "{v:?}");
    }
    assert!(apply_a_variant(&t, "bw", &AVariant::IndependentPermuted, 0).is_err());
}

#[test]
fn oracle_reveal_moves_pool_to_train() {
    let r = simulate(&table(200, 6), &SimulationConfig::default(), 6).unwrap();
    let truth: BTreeMap<SampleId, bool> = r.world.truth_rows().map(|t| (t.id, t.a)).collect();
    let mut p = r.partition.clone();
    let first: Vec<SampleId> = p.pool().iter().copied().take(3).collect();
    let revealed = oracle_reveal(&r.world, &mut p, &first).unwrap();
    for (id, a) in &revealed {
        assert_eq!(*a, truth[id]);
        assert_eq!(p.split_of(*id), Some(Split::Train));
    }
    assert!(oracle_reveal(&r.world, &mut p, &first[..1]).is_err());
    let test_id = *p.test().iter().next().unwrap();
    assert!(oracle_reveal(&r.world, &mut p, &[test_id]).is_err());
    let rest: Vec<SampleId> = p.pool().iter().copied().collect();
    oracle_reveal(&r.world, &mut p, &rest).unwrap();
    assert!(p.pool().is_empty());
    assert_eq!(p.train().len() + p.test().len(), 200);
}

#[test]
fn one_seed_fixes_the_realization() {
    let t = table(150, 2);
    let cfg = SimulationConfig::default();
    let a = simulate(&t, &cfg, 21).unwrap();
    let b = simulate(&t, &cfg, 21).unwrap();
    assert_eq!(a.world, b.world);
    assert_eq!(a.partition, b.partition);
    assert_eq!(a.treatment, b.treatment);
    assert_eq!(a.surface, b.surface);
    let c = simulate(&t, &cfg, 22).unwrap();
    assert_ne!(a.world, c.world);
}
