//! Invariants of the metrics, slot bands, pronoun rewriting, bus and store,
//! checked on generated inputs.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use gentext_core::bus::{EventBus, Topic};
use gentext_core::clock::SimClock;
use gentext_core::metrics::{corpus_report, lcs_len, lev, lev_slice, perplexity, rouge_l, rouge_n, rouge_tokens, Metric, TextPair, TokenLogProbs, Unit};
use gentext_core::model::{ContentState, GeneratedContent, Priority, Property, PronounClass, ScoringEvent};
use gentext_core::postprocess::{enforce_pronouns, PronounTable};
use gentext_core::slots::{band, Bands};
use gentext_core::store::{escape_key, unescape_key, ContentStore, FsBackend, Kind};

fn short_text() -> impl Strategy<Value = String> {
    "[abc ]{0,12}"
}

fn sentence() -> impl Strategy<Value = String> {
    let words = prop::sample::select(vec![
        "the", "ball", "Cup", "won", "and", "she", "He", "her", "his", "him", "they", "them", "their", "theirs", "hers", "herself",
        "himself", "HE", "Her", "after", "lead", "to", "is", "again", ",", ".",
    ]);
    prop::collection::vec(words, 0..14).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lev_is_a_metric(a in short_text(), b in short_text(), c in short_text()) {
        let d = lev(&a, &b);
        prop_assert_eq!(lev(&a, &a), 0);
        prop_assert_eq!(d, lev(&b, &a));
        prop_assert!(d <= lev(&a, &c) + lev(&c, &b));
        let (la, lb) = (a.chars().count(), b.chars().count());
        prop_assert!(la.abs_diff(lb) <= d && d <= la.max(lb));
        prop_assert_eq!(d == 0, a == b);
        let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
        prop_assert_eq!(lev_slice(&ca, &cb), d);
    }

    #[test]
    fn rouge_bounds_and_duality(t in short_text(), g in short_text()) {
        for n in 1..=3 {
            let s = rouge_n(&t, &g, n);
            let r = rouge_n(&g, &t, n);
            prop_assert!((0.0..=1.0).contains(&s.recall) && (0.0..=1.0).contains(&s.precision) && (0.0..=1.0).contains(&s.f));
            prop_assert!((s.recall - r.precision).abs() < 1e-12);
            prop_assert!((s.f - r.f).abs() < 1e-12);
        }
        let l = rouge_l(&t, &g);
        let (tt, gt) = (rouge_tokens(&t), rouge_tokens(&g));
        prop_assert!(lcs_len(&tt, &gt) <= tt.len().min(gt.len()));
        prop_assert!((l.recall - rouge_l(&g, &t).precision).abs() < 1e-12);
        if !tt.is_empty() {
            prop_assert!((rouge_n(&t, &t, 1).f - 1.0).abs() < 1e-12);
            prop_assert!((rouge_l(&t, &t).f - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perplexity_is_exp_mean_nll(lps in prop::collection::vec(-20.0f64..=0.0, 1..50)) {
        let tokens = vec!["t".to_string(); lps.len()];
        let p = perplexity(&TokenLogProbs { tokens, logprobs: lps.clone() }).unwrap();
        let mean = lps.iter().sum::<f64>() / lps.len() as f64;
        prop_assert!(p >= 1.0);
        prop_assert!((p - (-mean).exp()).abs() <= 1e-9 * p);
    }

    #[test]
    fn default_bands_follow_the_edges(p in 0.0f64..=100.0) {
        // Each inner edge passed moves one band up; 100 stays in the top band.
        let labels = ["poor", "below-average", "average", "strong", "outstanding"];
        let passed = [20.0, 40.0, 60.0, 80.0].iter().filter(|e| p >= **e).count();
        prop_assert_eq!(band(p).unwrap(), labels[passed]);
        let (lo, hi) = Bands::default().range(labels[passed]).unwrap();
        prop_assert!(lo <= p && (p < hi || p == 100.0));
    }

    #[test]
    fn pronouns_conform_and_settle(s in sentence(), class in prop::sample::select(vec![PronounClass::Feminine, PronounClass::Masculine, PronounClass::Neutral])) {
        let table = PronounTable::builtin();
        let once = enforce_pronouns(&s, class, &table);
        prop_assert_eq!(enforce_pronouns(&once, class, &table), once.clone());
        let all: Vec<String> = [PronounClass::Feminine, PronounClass::Masculine, PronounClass::Neutral]
            .iter()
            .flat_map(|c| table.forms(*c).to_vec())
            .collect();
        let target = table.forms(class);
        for w in once.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
            let lower = w.to_lowercase();
            if all.contains(&lower) {
                prop_assert!(target.contains(&lower), "{} left in {:?}", w, once);
            }
        }
        prop_assert_eq!(once.split(' ').count(), s.split(' ').count());
    }

    #[test]
    fn store_keys_escape_reversibly(key in "[ -~]{0,40}") {
        let e = escape_key(&key);
        prop_assert!(e.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-' | b'%')));
        prop_assert_eq!(unescape_key(&e), Some(key));
    }

    #[test]
    fn corpus_aggregates_are_means(pairs in prop::collection::vec((short_text(), short_text()), 1..8)) {
        let pairs: Vec<TextPair> = pairs.into_iter().map(|(g, r)| TextPair::new(g, r)).collect();
        let report = corpus_report(&pairs, &[Metric::Lev, Metric::Rouge1, Metric::RougeL], Unit::Char).unwrap();
        let mean = |f: &dyn Fn(&TextPair) -> f64| pairs.iter().map(f).sum::<f64>() / pairs.len() as f64;
        let lev_mean = mean(&|p| lev(&p.generated, &p.reference) as f64);
        let r1 = 100.0 * mean(&|p| rouge_n(&p.generated, &p.reference, 1).f);
        let rl = 100.0 * mean(&|p| rouge_l(&p.generated, &p.reference).recall);
        prop_assert!((report.aggregates["lev"] - lev_mean).abs() < 1e-9);
        prop_assert!((report.aggregates["rouge1_f"] - r1).abs() < 1e-9);
        prop_assert!((report.aggregates["rougeL_recall"] - rl).abs() < 1e-9);
        prop_assert_eq!(report.per_pair.len(), pairs.len());
    }
}

fn content(i: usize, text: &str, state: ContentState) -> GeneratedContent {
    let mut c = GeneratedContent::draft(format!("id/{i} {text}"), format!("ev-{i}"), text);
    c.scene = "golf/shot".into();
    c.final_text = (i % 2 == 0).then(|| text.to_uppercase());
    c.revision = 1 + i as u32 % 4;
    c.state = state;
    c
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn content_round_trips_through_both_backends(
        items in prop::collection::vec(("[ -~]{0,30}", prop::sample::select(vec![ContentState::Draft, ContentState::PendingReview, ContentState::Published, ContentState::Rejected])), 250)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let stores = [ContentStore::memory(), ContentStore::new(Arc::new(FsBackend::open(dir.path()).unwrap())).unwrap()];
        for store in &stores {
            let mut by_state: BTreeMap<ContentState, usize> = BTreeMap::new();
            for (i, (text, state)) in items.iter().enumerate() {
                let c = content(i, text, *state);
                store.put_content(&c).unwrap();
                prop_assert_eq!(store.get_content(&c.content_id).unwrap(), c);
                *by_state.entry(*state).or_default() += 1;
            }
            for (state, n) in &by_state {
                prop_assert_eq!(store.list_by_state(*state).len(), *n);
            }
            store.put(Kind::Object, "content/x y.json", b"{}").unwrap();
            prop_assert_eq!(store.get(Kind::Object, "content/x y.json").unwrap().bytes, b"{}".to_vec());
        }
    }
}

fn event(id: usize) -> ScoringEvent {
    ScoringEvent::new(format!("e{id}"), Property::Golf, "shot", json!({"n": id}))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bus_keeps_per_key_order_and_delivers_everything(
        keys in prop::collection::vec(0usize..6, 1..80),
        crash_at in prop::option::of(0usize..80),
    ) {
        let clock = SimClock::new();
        let bus = EventBus::new(clock);
        bus.create_topic(Topic::new("golf", 4).with_fast_track([3])).unwrap();
        for (i, k) in keys.iter().enumerate() {
            bus.publish("golf", &format!("k{k}"), event(i), Priority::Normal).unwrap();
        }
        let mut consumer = bus.consumer("golf", "g").unwrap();
        let mut delivered: HashMap<String, usize> = HashMap::new();
        let mut order: HashMap<String, Vec<usize>> = HashMap::new();
        let mut polls = 0;
        let mut crashed = false;
        while let Some(env) = consumer.poll() {
            polls += 1;
            let id: usize = env.payload.event_id[1..].parse().unwrap();
            *delivered.entry(env.payload.event_id.clone()).or_default() += 1;
            if Some(polls) == crash_at && !crashed {
                crashed = true;
                consumer.crash();
                continue;
            }
            order.entry(env.key.clone()).or_default().push(id);
            consumer.ack(&env).unwrap();
            prop_assert!(polls < 10 * keys.len() + 10);
        }
        // At least once: every event was acked exactly once.
        let acked: usize = order.values().map(Vec::len).sum();
        prop_assert_eq!(acked, keys.len());
        for i in 0..keys.len() {
            let id = format!("e{i}");
            prop_assert!(delivered.get(&id).copied().unwrap_or(0) >= 1);
        }
        if !crashed {
            for ids in order.values() {
                prop_assert!(ids.windows(2).all(|w| w[0] < w[1]), "{:?}", ids);
            }
        }
    }
}
