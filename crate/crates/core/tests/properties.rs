mod common;

use ace_core::delta::{merge, merge_batch, DeltaContext, DeltaOp};
use ace_core::embeddings::HashingEmbedder;
use ace_core::playbook::Playbook;
use ace_core::refine::{dedup, prune_within};
use ace_core::tokens::ProxyTokenCounter;
use common::{dedup_oracle, prune_oracle, random_deltas, random_mark_deltas, random_playbook, report_of, Model};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn merge_batch_matches_sequential_fold(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 8, 8000);
        let deltas = random_deltas(&mut r, &pb, 6);
        let (next, reports) = merge_batch(&pb, &deltas).unwrap();
        let mut model = Model::of(&pb);
        let expected = model.fold(&deltas);
        prop_assert_eq!(Model::of(&next), model);
        prop_assert_eq!(reports.iter().map(report_of).collect::<Vec<_>>(), expected);
    }

    #[test]
    fn merging_never_shrinks_or_lowers_counters(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 8, 8000);
        let (next, _) = merge_batch(&pb, &random_deltas(&mut r, &pb, 6)).unwrap();
        prop_assert!(next.len() >= pb.len());
        for b in pb.bullets() {
            let after = next.get(b.id).expect("no bullet disappears");
            prop_assert!(after.helpful >= b.helpful && after.harmful >= b.harmful);
            prop_assert_eq!(&after.content, &b.content);
        }
    }

    #[test]
    fn mark_only_deltas_commute(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 6, 8000);
        let mut deltas = random_mark_deltas(&mut r, &pb, 5);
        let (first, _) = merge_batch(&pb, &deltas).unwrap();
        deltas.shuffle(&mut r);
        let (second, _) = merge_batch(&pb, &deltas).unwrap();
        prop_assert_eq!(first.to_document(), second.to_document());
    }

    #[test]
    fn dedup_is_idempotent_and_conserves_counters(seed in any::<u64>(), threshold in 0.5f64..=1.0) {
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 10, 8000);
        let c = ProxyTokenCounter;
        let (once, report) = dedup(&pb, &HashingEmbedder, threshold, &c).unwrap();
        let (twice, again) = dedup(&once, &HashingEmbedder, threshold, &c).unwrap();
        prop_assert_eq!(once.to_document(), twice.to_document());
        prop_assert!(again.merged_pairs.is_empty());
        prop_assert_eq!(once.counter_totals(), pb.counter_totals());

        let (kept, absorbed) = dedup_oracle(&pb, threshold);
        let actual: Vec<_> = once.bullets().map(|b| (b.id.get(), (b.helpful, b.harmful))).collect();
        prop_assert_eq!(actual, kept.into_iter().collect::<Vec<_>>());
        let mut got: Vec<u64> = report.merged_pairs.iter().map(|p| p.absorbed_id.get()).collect();
        got.sort();
        prop_assert_eq!(got, absorbed);
    }

    #[test]
    fn prune_matches_brute_force(seed in any::<u64>(), budget in 1usize..80) {
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 6, 8000);
        let c = ProxyTokenCounter;
        let (next, report) = prune_within(&pb, &c, budget);
        let expected = prune_oracle(&pb, &c, budget);
        prop_assert_eq!(report.pruned_ids.iter().map(|i| i.get()).collect::<Vec<_>>(), expected);
        prop_assert!(next.len() >= pb.len().min(1));
        prop_assert_eq!(report.tokens_after, next.token_count(&c));
    }

    #[test]
    fn documents_round_trip(seed in any::<u64>(), content in "\\PC{1,40}", section in 0usize..3) {
        prop_assume!(!content.trim().is_empty());
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 6, 500);
        let add = DeltaContext::new("rt", 0, 1).with_ops([DeltaOp::add(common::SECTIONS[section], content.clone())]);
        let (pb, _) = merge(&pb, &add).unwrap();
        let text = pb.to_document();
        let back = Playbook::from_document(&text).unwrap();
        prop_assert_eq!(back.to_document(), text);
        prop_assert_eq!(back.render(), pb.render());
    }

    #[test]
    fn rendering_keeps_one_line_per_bullet(lines in proptest::collection::vec("[a-z \\n\\\\]{1,20}", 1..6)) {
        let ops = lines.iter().filter(|l| !l.trim().is_empty()).map(|l| DeltaOp::add("general", l.clone()));
        let (pb, _) = merge(&Playbook::new(["general"], 100).unwrap(), &DeltaContext::new("r", 0, 1).with_ops(ops)).unwrap();
        let rendered = pb.render();
        let bullet_lines = rendered.lines().filter(|l| l.starts_with("[pb-")).count();
        prop_assert_eq!(bullet_lines, pb.len());
    }

    #[test]
    fn tokens_grow_with_bullets(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pb = random_playbook(&mut r, 6, 8000);
        let c = ProxyTokenCounter;
        let (next, _) = merge(&pb, &DeltaContext::new("t", 0, 1).with_ops([DeltaOp::add("general", "one more lesson")])).unwrap();
        prop_assert!(next.token_count(&c) > pb.token_count(&c));
    }
}
