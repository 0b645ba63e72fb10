use proptest::prelude::*;
use vtrim::assembly::plan_to_intervals;
use vtrim::composition::parse_plan;
use vtrim::evaluation::{average_precision, average_ranks, kendall_tau_b, pearson, spearman};
use vtrim::filtering::{dynamic_filter, ScoreKey};
use vtrim::ingest::{boundaries, segment, IngestConfig};
use vtrim::structuring::{parse_structured_description, to_attribute_text};
use vtrim::{CompositionPlan, ContextualAttributes, DefectScores, SourceVideo, StructuredDescription};

fn hundredths() -> impl Strategy<Value = f64> {
    (0u32..=100).prop_map(|k| k as f64 / 100.0)
}

fn phrase() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z ,.'-]{0,40}[A-Za-z.]".prop_map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
}

proptest! {
    #[test]
    fn tiling_covers_source(d in 0.001f64..3600.0, clip in 1.0f64..10.0, tail in 0.0f64..1.0) {
        let cfg = IngestConfig { clip_duration: clip, min_tail: tail * clip, ..Default::default() };
        let iv = boundaries(d, &cfg);
        prop_assert_eq!(iv[0].start, 0.0);
        prop_assert!((iv.last().unwrap().end - d).abs() <= 1e-9);
        for w in iv.windows(2) {
            prop_assert!((w[0].end - w[1].start).abs() <= 1e-9);
            prop_assert!((w[0].end - w[0].start - clip).abs() <= 1e-9);
        }
        prop_assert!(iv.iter().all(|c| c.end > c.start));
    }

    #[test]
    fn description_round_trip(
        s in proptest::array::uniform5(hundredths()),
        caption in phrase(),
        what in phrase(),
        who in phrase(),
    ) {
        let d = StructuredDescription {
            clip_id: 3,
            raw_caption: caption,
            contextual: ContextualAttributes { what, where_: "park".into(), when: "noon".into(), who },
            defects: DefectScores { occlusion: s[0], jittering: s[1], overexposure: s[2], meaningless: s[3] },
            highlight: s[4],
        };
        let back = parse_structured_description(&to_attribute_text(&d), 3).unwrap().description;
        prop_assert_eq!(back, d);
    }

    #[test]
    fn filter_score_is_the_maximum(s in proptest::array::uniform5(hundredths())) {
        let v = dynamic_filter(&ScoreKey::CANONICAL, &s).unwrap();
        let max = s.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(v.score, max);
        prop_assert!(!(v.filter_flag && v.highlight_flag));
        if v.highlight_flag {
            prop_assert_eq!(s[4], max);
        }
    }

    #[test]
    fn spearman_is_pearson_of_ranks(
        pairs in proptest::collection::vec((0u8..5, -50i32..50), 3..30)
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64 / 7.0).collect();
        match (spearman(&x, &y), pearson(&average_ranks(&x), &average_ranks(&y))) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn ap_ignores_increasing_transforms(
        rows in proptest::collection::vec((-1.0f64..1.0, any::<bool>()), 1..40)
    ) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 2.0).collect();
        match (average_precision(&scores, &labels), average_precision(&squashed, &labels)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a - b).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&a));
            }
            (Err(_), Err(_)) => prop_assert!(!labels.contains(&true)),
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn tau_is_antisymmetric(
        x in proptest::collection::vec(-10i32..10, 3..25),
        y in proptest::collection::btree_set(-1000i32..1000, 3..25),
    ) {
        let n = x.len().min(y.len());
        prop_assume!(n >= 3);
        let x: Vec<f64> = x[..n].iter().map(|v| *v as f64).collect();
        let y: Vec<f64> = y.iter().take(n).map(|v| *v as f64).collect();
        let rev: Vec<f64> = y.iter().map(|v| -v).collect();
        match (kendall_tau_b(&x, &y), kendall_tau_b(&x, &rev)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((a + b).abs() <= 1e-12);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn parsed_plans_are_consistent(
        ids in proptest::collection::vec(1u32..40, 1..30),
        candidates in proptest::collection::btree_set(1u32..40, 1..30),
    ) {
        let candidates: Vec<u32> = candidates.into_iter().collect();
        let mut text = String::from("[Global Storyline]: a story\n");
        text.push_str(&format!("[Theme]: Mixed ({})\n", ids.iter().map(|i| format!("Clip {i}")).collect::<Vec<_>>().join(", ")));
        for id in &ids {
            text.push_str(&format!("Development: Clip {id} - scene\n"));
        }
        if let Ok(plan) = parse_plan(&text, &candidates) {
            prop_assert!(plan.validate(&candidates).is_ok());
            prop_assert!(!plan.ordered_clip_ids.is_empty());
        } else {
            prop_assert!(ids.iter().all(|i| !candidates.contains(i)));
        }
    }

    #[test]
    fn intervals_stay_inside_sources(
        order in Just((1u32..=30).collect::<Vec<_>>()).prop_shuffle(),
        take in 1usize..30,
    ) {
        let a = SourceVideo { video_id: "a".into(), uri: "synthetic:a".into(), duration: 46.0, frame_rate: 30.0 };
        let b = SourceVideo { video_id: "b".into(), uri: "synthetic:b".into(), duration: 44.5, frame_rate: 30.0 };
        let cfg = IngestConfig::default();
        let mut clips = segment(&a, &cfg, 0).unwrap().clips;
        let n = clips.len() as u32;
        clips.extend(segment(&b, &cfg, n).unwrap().clips);
        let plan = CompositionPlan {
            ordered_clip_ids: order.into_iter().filter(|id| *id <= clips.len() as u32).take(take).collect(),
            ..Default::default()
        };
        let segs = plan_to_intervals(&plan, &clips).unwrap();
        let want: f64 = plan.ordered_clip_ids.iter().map(|id| clips[*id as usize - 1].interval.len()).sum();
        let got: f64 = segs.iter().map(|s| s.interval.len()).sum();
        prop_assert!((want - got).abs() <= 1e-9);
        for s in &segs {
            let dur = if s.video_id == "a" { a.duration } else { b.duration };
            prop_assert!(s.interval.start >= 0.0 && s.interval.end <= dur + 1e-9);
        }
        let flat: Vec<u32> = segs.iter().flat_map(|s| s.clip_ids.clone()).collect();
        prop_assert_eq!(flat, plan.ordered_clip_ids);
    }
}
