use proptest::prelude::*;

use skewsize::contingency::{
    apply_mev_filter, chi_square, cramers_v, degrees_of_freedom, phi_coefficient,
};
use skewsize::ingest::{group_by_class, read_csv, write_records, ColumnSpec};
use skewsize::metrics::{
    accuracy_metrics, classify_band, demographic_parity, equalized_odds,
    fisher_pearson_skewness, per_class_effect_sizes, skewsize as skewsize_of, ClassEffect,
};
use skewsize::report::{audit, RenderFormat};
use skewsize::simulate::{dsprites_scenario, interpolate, sample_records, BiasInterpolation};
use skewsize::{
    Aggregation, AuditConfig, AuditReport, CanonicalizationRules, ContingencyTable, EffectConfig,
    EoMode, PredictionRecord, SkewConvention,
};

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn arb_table() -> impl Strategy<Value = ContingencyTable> {
    (1usize..=6, 1usize..=6)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), prop::collection::vec(0u64..40, r * c)))
        .prop_filter_map("zero margin", |(r, c, counts)| {
            ContingencyTable::new(labels("g", r), labels("p", c), counts).ok()
        })
}

fn arb_records() -> impl Strategy<Value = Vec<PredictionRecord>> {
    prop::collection::vec((0u8..4, 0u8..5, 0u8..3), 1..300).prop_map(|rows| {
        rows.into_iter()
            .map(|(c, p, g)| PredictionRecord::new(format!("c{c}"), format!("c{p}"), format!("g{g}")))
            .collect()
    })
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, 3..40)
        .prop_filter("needs spread", |xs| xs.iter().any(|&x| (x - xs[0]).abs() > 1e-3))
}

proptest! {
    #[test]
    fn effect_size_in_unit_interval(t in arb_table()) {
        match cramers_v(&t) {
            Some(v) => {
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(classify_band(v).is_ok());
            }
            None => prop_assert_eq!(degrees_of_freedom(&t), 0),
        }
        prop_assert!(chi_square(&t) >= 0.0);
    }

    #[test]
    fn single_row_or_column_has_no_association(t in arb_table()) {
        if t.n_rows() == 1 || t.n_cols() == 1 {
            prop_assert_eq!(chi_square(&t), 0.0);
            prop_assert_eq!(cramers_v(&t), None);
        }
    }

    #[test]
    fn permutation_leaves_statistics_unchanged(
        t in arb_table(),
        row_seed in any::<u64>(),
        col_seed in any::<u64>(),
    ) {
        let rotate = |n: usize, s: u64| -> Vec<usize> {
            let k = (s % n as u64) as usize;
            let mut v: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
            if s & 1 == 1 { v.reverse(); }
            v
        };
        let p = t.permuted(&rotate(t.n_rows(), row_seed), &rotate(t.n_cols(), col_seed));
        prop_assert_eq!(chi_square(&p), chi_square(&t));
        prop_assert_eq!(cramers_v(&p), cramers_v(&t));
        prop_assert_eq!(phi_coefficient(&p).value, phi_coefficient(&t).value);
    }

    #[test]
    fn scaling_leaves_effect_size_unchanged(t in arb_table(), k in 2u64..20) {
        let scaled = t.scaled(k);
        match (cramers_v(&t), cramers_v(&scaled)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b),
            (a, b) => prop_assert_eq!(a, b),
        }
        let ratio = chi_square(&scaled) / k as f64;
        prop_assert!((ratio - chi_square(&t)).abs() <= 1e-9 * chi_square(&t).max(1.0));
    }

    #[test]
    fn independent_tables_have_no_association(
        a in prop::collection::vec(1u64..30, 2..6),
        b in prop::collection::vec(1u64..30, 2..6),
    ) {
        let counts = a.iter().flat_map(|x| b.iter().map(move |y| x * y)).collect();
        let t = ContingencyTable::new(labels("g", a.len()), labels("p", b.len()), counts).unwrap();
        prop_assert!(cramers_v(&t).unwrap() < 1e-6);
    }

    #[test]
    fn mev_filter_is_monotone_in_threshold(t in arb_table(), lo in 0.0f64..10.0, step in 0.0f64..10.0) {
        let hi = lo + step;
        let kept = |th: f64| apply_mev_filter(&t, th).map(|o| o.kept.col_labels().to_vec());
        match (kept(lo), kept(hi)) {
            (Ok(a), Ok(b)) => prop_assert!(b.iter().all(|l| a.contains(l))),
            (Err(_), Ok(_)) => prop_assert!(false, "higher threshold kept columns a lower one removed"),
            _ => {}
        }
    }

    #[test]
    fn effect_sizes_compose_table_filter_and_cramers_v(records in arb_records(), mev in 0.0f64..6.0) {
        let config = EffectConfig { mev_threshold: mev, ..EffectConfig::default() };
        let effects = per_class_effect_sizes(&records, &config).unwrap();
        let groups = group_by_class(&records);
        prop_assert_eq!(effects.len(), groups.len());
        for (effect, (class, pairs)) in effects.iter().zip(&groups) {
            prop_assert_eq!(&effect.class_label, class);
            let table = ContingencyTable::from_pairs(pairs.iter().copied()).unwrap();
            let expected = apply_mev_filter(&table, mev).ok().and_then(|o| cramers_v(&o.kept));
            prop_assert_eq!(effect.effect_size, expected);
        }
    }

    #[test]
    fn group_by_class_partitions_records(records in arb_records()) {
        let groups = group_by_class(&records);
        let total: usize = groups.values().map(Vec::len).sum();
        prop_assert_eq!(total, records.len());
        for r in &records {
            let pairs = &groups[r.ground_truth.as_str()];
            prop_assert!(pairs.contains(&(r.subgroup.as_str(), r.prediction.as_str())));
        }
    }

    #[test]
    fn skewness_is_location_and_scale_invariant(xs in sample(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let base = fisher_pearson_skewness(&xs, SkewConvention::Moment).unwrap();
        let moved: Vec<f64> = xs.iter().map(|x| x * scale + shift).collect();
        let got = fisher_pearson_skewness(&moved, SkewConvention::Moment).unwrap();
        prop_assert!((got - base).abs() < 1e-6 * base.abs().max(1.0), "{} vs {}", got, base);
    }

    #[test]
    fn skewness_negates_under_reflection(xs in sample()) {
        let reflected: Vec<f64> = xs.iter().map(|x| -x).collect();
        for conv in [SkewConvention::Moment, SkewConvention::Eq4Literal] {
            let a = fisher_pearson_skewness(&xs, conv).unwrap();
            let b = fisher_pearson_skewness(&reflected, conv).unwrap();
            prop_assert!((a + b).abs() < 1e-9);
        }
    }

    #[test]
    fn skewsize_ignores_class_order(values in prop::collection::vec(0.0f64..1.0, 2..20), rot in any::<usize>()) {
        let effects: Vec<ClassEffect> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| ClassEffect::defined(&format!("c{i}"), v, 1, 100))
            .collect();
        let mut rotated = effects.clone();
        rotated.rotate_left(rot % effects.len());
        let a = skewsize_of(&effects, SkewConvention::Moment).unwrap().value;
        let b = skewsize_of(&rotated, SkewConvention::Moment).unwrap().value;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn canonicalization_is_idempotent(
        s in "\\PC{0,20}",
        lowercase in any::<bool>(),
        trim in any::<bool>(),
        strip in any::<bool>(),
    ) {
        let rules = CanonicalizationRules::new(lowercase, trim, strip);
        let once = rules.canonicalize(&s);
        prop_assert_eq!(rules.canonicalize(&once), once);
    }

    #[test]
    fn csv_round_trip_preserves_records(
        rows in prop::collection::vec(("[a-z ,\"]{1,8}", "[a-z ,\"]{1,8}", "[a-z]{1,4}"), 1..40),
        with_ids in any::<bool>(),
    ) {
        let records: Vec<PredictionRecord> = rows
            .into_iter()
            .enumerate()
            .filter(|(_, (gt, _, _))| !gt.trim().is_empty())
            .map(|(i, (gt, pred, group))| {
                let r = PredictionRecord::new(gt, pred, group);
                if with_ids { r.with_id(i.to_string()) } else { r }
            })
            .collect();
        let mut buf = Vec::new();
        write_records(&mut buf, &records).unwrap();
        let columns = ColumnSpec {
            id: with_ids.then(|| "id".to_owned()),
            ..ColumnSpec::default()
        };
        let back = read_csv(buf.as_slice(), &columns, b',').unwrap();
        prop_assert_eq!(back, records);
    }

    #[test]
    fn overall_accuracy_is_group_weighted_mean(records in arb_records()) {
        let acc = accuracy_metrics(&records).unwrap();
        let mut weighted = 0.0;
        for (group, a) in &acc.per_group {
            let n = records.iter().filter(|r| &r.subgroup == group).count();
            weighted += a * n as f64;
        }
        weighted /= records.len() as f64;
        prop_assert!((weighted - acc.overall).abs() < 1e-12);
        prop_assert!(acc.worst_group <= acc.overall + 1e-12);
        prop_assert!(acc.gap >= 0.0);
    }

    #[test]
    fn identical_subgroups_have_no_fairness_gap(records in arb_records()) {
        let doubled: Vec<PredictionRecord> = records
            .iter()
            .flat_map(|r| {
                ["a", "b"].map(|g| PredictionRecord::new(r.ground_truth.clone(), r.prediction.clone(), g))
            })
            .collect();
        let dp = demographic_parity(&doubled, Aggregation::Max).unwrap();
        let eo = equalized_odds(&doubled, Aggregation::Max, EoMode::PerLabel).unwrap();
        prop_assert!(dp.per_class.values().all(|&g| g == 0.0));
        prop_assert!(eo.per_class.values().all(|&g| g == 0.0));
    }

    #[test]
    fn interpolation_is_cellwise_linear(lambda in 0.0f64..=1.0) {
        let base = dsprites_scenario(0.0).unwrap();
        let stereo = dsprites_scenario(1.0).unwrap();
        let mixed = interpolate(&BiasInterpolation { base: base.clone(), stereo: stereo.clone(), strength: lambda }).unwrap();
        for class in base.classes() {
            for group in base.subgroups() {
                for label in base.prediction_space() {
                    let want = (1.0 - lambda) * base.probability(class, group, label).unwrap()
                        + lambda * stereo.probability(class, group, label).unwrap();
                    let got = mixed.probability(class, group, label).unwrap();
                    prop_assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampling_fills_every_cell_deterministically(seed in any::<u64>(), n in 1usize..50) {
        let spec = dsprites_scenario(0.5).unwrap().with_n_per_cell(n).unwrap();
        let a = sample_records(&spec, seed);
        prop_assert_eq!(a.len(), spec.n_records());
        for class in spec.classes() {
            for group in spec.subgroups() {
                let count = a.iter().filter(|r| &r.ground_truth == class && &r.subgroup == group).count();
                prop_assert_eq!(count, n);
            }
        }
        prop_assert_eq!(sample_records(&spec, seed), a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn report_json_round_trips(records in arb_records()) {
        let report = audit(&records, &AuditConfig::default()).unwrap();
        let json = report.render(RenderFormat::Json);
        let parsed: AuditReport = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(parsed.render(RenderFormat::Json), json);
        let classes: usize = report.band_histogram.values().sum();
        prop_assert_eq!(classes, report.aggregate.classes_used);
    }
}
