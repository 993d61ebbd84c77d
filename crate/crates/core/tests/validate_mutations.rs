use hleval_core::corpus::{validate, CorpusBundle, GazeTarget, Judgment, Verdict};
use hleval_core::synth::{generate, SynthConfig};
use proptest::prelude::*;

fn base() -> CorpusBundle {
    let cfg = SynthConfig {
        n_dialogues: 3,
        duration_s: 130.0,
        n_annotators: 6,
        load_min: 0,
        ..Default::default()
    };
    generate(&cfg).unwrap().0
}

/// Single-field corruptions, each of which breaks some invariant.
fn corrupt(b: &mut CorpusBundle, which: usize, pick: usize) {
    let (n_samples, n_judgments) = (b.samples.len(), b.judgments.len());
    let d = &mut b.dialogues[pick % 3];
    match which {
        0 => d.duration = 0,
        1 => {
            let i = pick % d.user.segments.len();
            d.user.segments[i].end = d.user.segments[i].start;
        }
        2 => {
            let i = pick % d.system.segments.len();
            d.system.segments[i].end = d.duration + 1;
        }
        3 => {
            let i = 1 + pick % (d.user.segments.len() - 1);
            d.user.segments[i].start = d.user.segments[i - 1].start;
        }
        4 => {
            let i = 1 + pick % (d.user.segments.len() - 1);
            d.user.segments[i].start = d.user.segments[i - 1].end - 1;
        }
        5 => {
            let seg = d.user.segments.iter_mut().find(|s| !s.tokens.is_empty()).unwrap();
            seg.tokens[0].surface.clear();
        }
        6 => {
            let i = 1 + pick % (d.gaze.len() - 1);
            d.gaze[i].target = d.gaze[i - 1].target;
        }
        7 => d.questionnaire.as_mut().unwrap().pop().map(|_| ()).unwrap(),
        8 => d.questionnaire.as_mut().unwrap()[pick % 19] = 8,
        9 => {
            let i = pick % d.user.events.len();
            d.user.events[i].end = d.duration + 5;
        }
        10 => {
            let id = d.dialogue_id.clone();
            b.dialogues[(pick + 1) % 3].dialogue_id = id;
        }
        11 => b.samples[pick % n_samples].dialogue_id = "ghost".into(),
        12 => b.judgments[pick % n_judgments].sample_id = "ghost".into(),
        13 => {
            let j = b.judgments[pick % n_judgments].clone();
            b.judgments
                .push(Judgment::new(j.sample_id, j.annotator_id, Verdict::Human));
        }
        _ => {
            let i = pick % d.gaze.len();
            d.gaze[i].end = d.gaze[i].start - 1;
            d.gaze[i].target = GazeTarget::Away;
        }
    }
}

#[test]
fn generated_bundle_is_clean() {
    assert!(validate(&base()).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]
    #[test]
    fn every_corruption_is_reported(which in 0usize..15, pick in 0usize..1000) {
        let mut b = base();
        corrupt(&mut b, which, pick);
        prop_assert!(!validate(&b).is_empty(), "mutation {which} went unnoticed");
    }
}
