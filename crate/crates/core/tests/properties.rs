mod common;

use common::{close, small_log, subset_oracle, weight_oracle};
use ppmxai::encoding::{
    bucket, encode, BucketingStrategy, CategoryVocabulary, EncoderKind, EncodingMethod,
    ObservedDomain,
};
use ppmxai::eventlog::{downsample_majority, extract_prefixes, parse_log_str};
use ppmxai::explain::CaseRef;
use ppmxai::metrics::{
    perturb, sampling_domain, stability_by_subset, stability_by_weight, InfluentialRegion,
    PerturbationPlan, PerturbationTarget, SubsetMatrix, WeightMatrix,
};
use ppmxai::rng::seeded;
use proptest::prelude::*;

fn bool_matrix() -> impl Strategy<Value = Vec<Vec<bool>>> {
    (2usize..=10, 2usize..=50)
        .prop_flat_map(|(m, d)| prop::collection::vec(prop::collection::vec(any::<bool>(), d), m))
}

fn weight_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..=10, 2usize..=30).prop_flat_map(|(m, d)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![Just(0.0), -5.0..5.0f64], d),
            m,
        )
    })
}

fn permute<T: Clone>(rows: &[Vec<T>], perm: &[usize]) -> Vec<Vec<T>> {
    rows.iter()
        .map(|r| perm.iter().map(|&j| r[j].clone()).collect())
        .collect()
}

proptest! {
    #[test]
    fn subset_matches_oracle(rows in bool_matrix()) {
        let z = SubsetMatrix::from_rows(&rows).unwrap();
        match (stability_by_subset(&z), subset_oracle(&rows)) {
            (Ok(v), Some(o)) => prop_assert!(close(v, o, 1e-12), "{v} vs {o}"),
            (Err(_), None) => {}
            (a, b) => prop_assert!(false, "disagree: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn weight_matches_oracle(rows in weight_matrix()) {
        let w = WeightMatrix::from_rows(&rows).unwrap();
        let v = stability_by_weight(&w).unwrap().value;
        let o = weight_oracle(&rows);
        prop_assert!(close(v, o, 1e-12), "{v} vs {o}");
    }

    #[test]
    fn subset_is_one_iff_rows_identical(rows in bool_matrix(), copy in any::<bool>()) {
        let rows = if copy { vec![rows[0].clone(); rows.len()] } else { rows };
        let z = SubsetMatrix::from_rows(&rows).unwrap();
        if let Ok(v) = stability_by_subset(&z) {
            let identical = rows.iter().all(|r| r == &rows[0]);
            prop_assert_eq!(v == 1.0, identical, "value {}", v);
        }
    }

    #[test]
    fn column_permutation_invariance(rows in bool_matrix(), weights in weight_matrix(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut rng = seeded(seed);
        let mut perm: Vec<usize> = (0..rows[0].len()).collect();
        perm.shuffle(&mut rng);
        let a = stability_by_subset(&SubsetMatrix::from_rows(&rows).unwrap()).ok();
        let b = stability_by_subset(&SubsetMatrix::from_rows(&permute(&rows, &perm)).unwrap()).ok();
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!(close(a, b, 1e-12)),
            (a, b) => prop_assert_eq!(a, b),
        }
        let mut perm: Vec<usize> = (0..weights[0].len()).collect();
        perm.shuffle(&mut rng);
        let a = stability_by_weight(&WeightMatrix::from_rows(&weights).unwrap()).unwrap().value;
        let b = stability_by_weight(&WeightMatrix::from_rows(&permute(&weights, &perm)).unwrap()).unwrap().value;
        prop_assert!(close(a, b, 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn perturb_never_lands_in_the_interval(
        dlo in -50.0..50.0f64,
        width in 0.0..100.0f64,
        a in 0.0..1.0f64,
        b in 0.0..1.0f64,
        integer in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let dhi = dlo + width;
        let (a, b) = (a.min(b), a.max(b));
        // The interval may stick out of the domain on either side.
        let lo = dlo - 0.2 * width + a * 1.4 * width;
        let hi = dlo - 0.2 * width + b * 1.4 * width;
        let (dlo, dhi, lo, hi) = if integer {
            (dlo.round(), dhi.round(), lo, hi)
        } else {
            (dlo, dhi, lo, hi)
        };
        let domain = ObservedDomain { lo: dlo, hi: dhi, integer_valued: integer, is_binary_indicator: false, values: vec![] };
        let region = InfluentialRegion::Interval { lo, hi };
        let sd = sampling_domain(0, &region, &domain).unwrap();
        let plan = PerturbationPlan {
            case_ref: CaseRef::new("p", 1),
            targets: vec![PerturbationTarget { column: 0, region: region.clone(), domain: sd, flags: vec![] }],
            n_perturbations: 1,
        };
        let mut rng = seeded(seed);
        for _ in 0..10_000 {
            let v = perturb(&[(lo + hi) / 2.0], &plan, &mut rng)[0];
            prop_assert!(!(v >= lo && v <= hi), "{} inside [{}, {}]", v, lo, hi);
            prop_assert!(v.is_finite());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prefix_count_matches_direct_sum(n in 1usize..40, max_len in 2usize..9, lo in 1usize..5, span in 0usize..6, seed in any::<u64>()) {
        let log = small_log(n, max_len, seed).log;
        let hi = lo + span;
        let prefixes = extract_prefixes(&log, lo, hi).unwrap();
        let expected: usize = log.traces.iter().map(|t| (t.len().min(hi) + 1).saturating_sub(lo)).sum();
        prop_assert_eq!(prefixes.len(), expected);
        let mut direct = 0;
        for t in &log.traces {
            for l in lo..=hi {
                if l <= t.len() {
                    direct += 1;
                }
            }
        }
        prop_assert_eq!(prefixes.len(), direct);
    }

    #[test]
    fn csv_round_trip(n in 1usize..30, max_len in 2usize..7, seed in any::<u64>()) {
        let log = small_log(n, max_len, seed).log;
        let text = log.to_csv_string().unwrap();
        let back = parse_log_str(&text, &log.schema).unwrap();
        prop_assert_eq!(back, log);
    }

    #[test]
    fn downsample_balances_and_keeps_input_traces(n in 4usize..60, seed in any::<u64>()) {
        let log = small_log(n, 4, seed).log;
        let (pos, neg) = log.class_counts();
        prop_assume!(pos > 0 && neg > 0);
        let out = downsample_majority(&log, seed ^ 1).unwrap();
        let (p2, n2) = out.class_counts();
        prop_assert_eq!(p2, n2);
        prop_assert_eq!(p2, pos.min(neg));
        for t in &out.traces {
            prop_assert!(log.traces.contains(t));
        }
        prop_assert_eq!(out, downsample_majority(&log, seed ^ 1).unwrap());
    }

    #[test]
    fn activity_counts_sum_to_prefix_length(n in 2usize..25, seed in any::<u64>()) {
        let log = small_log(n, 6, seed).log;
        let vocab = CategoryVocabulary::from_log(&log);
        let prefixes = extract_prefixes(&log, 1, 6).unwrap();
        let m = encode(&prefixes, "single", &log.schema, EncodingMethod::Aggregate, &vocab).unwrap();
        let activity = &log.schema.activity_column;
        let cols: Vec<usize> = m.descriptors.iter()
            .filter(|d| d.encoder == EncoderKind::AggCount && &d.source_attr == activity)
            .map(|d| d.column_index)
            .collect();
        prop_assert!(!cols.is_empty());
        for i in 0..m.n_rows {
            let s: f64 = cols.iter().map(|&j| m.get(i, j)).sum();
            prop_assert_eq!(s, m.prefix_lengths[i] as f64);
        }
    }

    #[test]
    fn encoding_ignores_trace_order(n in 2usize..25, seed in any::<u64>()) {
        let log = small_log(n, 5, seed).log;
        let mut shuffled = log.clone();
        shuffled.traces.reverse();
        let vocab = CategoryVocabulary::from_log(&log);
        for method in [EncodingMethod::Aggregate, EncodingMethod::IndexBased] {
            for strategy in [BucketingStrategy::Single, BucketingStrategy::PrefixLength] {
                let a = bucket(&extract_prefixes(&log, 1, 5).unwrap(), strategy);
                let b = bucket(&extract_prefixes(&shuffled, 1, 5).unwrap(), strategy);
                prop_assert_eq!(a.len(), b.len());
                for (ba, bb) in a.iter().zip(&b) {
                    let ma = encode(&ba.log, &ba.id, &log.schema, method, &vocab).unwrap();
                    let mb = encode(&bb.log, &bb.id, &log.schema, method, &vocab).unwrap();
                    prop_assert_eq!(&ma.descriptors, &mb.descriptors);
                    for i in 0..ma.n_rows {
                        let j = (0..mb.n_rows)
                            .find(|&j| mb.case_ids[j] == ma.case_ids[i] && mb.prefix_lengths[j] == ma.prefix_lengths[i])
                            .unwrap();
                        let (ra, rb) = (ma.row(i), mb.row(j));
                        prop_assert!(ra.iter().zip(rb).all(|(x, y)| x == y || (x.is_nan() && y.is_nan())));
                    }
                }
            }
        }
    }
}
