#![allow(dead_code)]

use arglink::corpus::{Essay, Segment, SegmentAnnotatedEssay, SourceCorpus};
use arglink::model::ModelParams;
use arglink::tree::ArgTree;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 18-sentence essay: S1 and S18 are non-argumentative, S2 is the major
/// claim, S10 heads a sub-argument and S17 is a leaf under S16.
pub fn annotation_example() -> ArgTree {
    ArgTree::from_heads(vec![0, 1, 1, 2, 2, 1, 5, 6, 5, 1, 9, 9, 11, 9, 1, 14, 15, 17]).unwrap()
}

/// The descendant-set matching pair over nodes 1..5 (0-based 0..4).
///
/// A: 1 is the root, 2 -> 1, and 3, 4, 5 -> 2, so dSet(2) = {2,3,4,5}.
/// B: same, except node 5 is non-argumentative.
pub fn substructure_pair() -> (ArgTree, ArgTree) {
    let a = ArgTree::from_heads(vec![0, 0, 1, 1, 1]).unwrap();
    let b = ArgTree::from_heads(vec![0, 0, 1, 1, 4]).unwrap();
    (a, b)
}

pub const CONVERSION_SENTENCE: &str = "To conclude, art could play an active role in improving the quality of people's lives, but I think that governments should attach heavier weight to other social issues such as education and housing needs because those are the most essential ways enable to make people a decent life.";

fn char_offset(text: &str, needle: &str) -> (usize, usize) {
    let byte = text.find(needle).expect("needle present");
    let start = text[..byte].chars().count();
    (start, start + needle.chars().count())
}

/// One sentence holding three AC spans with the connectives left outside
/// the spans. The middle AC is the root; the other two point at it.
pub fn conversion_fixture() -> SegmentAnnotatedEssay {
    let s = CONVERSION_SENTENCE;
    let spans = [
        "art could play an active role in improving the quality of people's lives,",
        "governments should attach heavier weight to other social issues such as education and housing needs",
        "those are the most essential ways enable to make people a decent life.",
    ];
    let mut segments = Vec::new();
    for (k, span) in spans.iter().enumerate() {
        let (start, end) = char_offset(s, span);
        segments.push(Segment {
            sent: 0,
            start,
            end,
            head_segment: if k == 1 { None } else { Some(1) },
        });
    }
    SegmentAnnotatedEssay {
        essay_id: "pec-conclusion".into(),
        sentences: vec![s.into()],
        segments,
    }
}

/// Random acyclic head vector: nodes are placed in a random order and each
/// attaches to an already placed node, with `non_ac` isolated self-loops.
pub fn random_tree(rng: &mut impl Rng, n: usize, non_ac: usize) -> ArgTree {
    assert!(non_ac < n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let acs = &order[..n - non_ac];
    let mut head: Vec<usize> = (0..n).collect();
    for k in 1..acs.len() {
        head[acs[k]] = acs[rng.gen_range(0..k)];
    }
    ArgTree::from_heads(head).unwrap()
}

/// Any acyclic head vector, possibly with several rooted subtrees.
pub fn random_forest(rng: &mut impl Rng, n: usize) -> ArgTree {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut head: Vec<usize> = (0..n).collect();
    for k in 1..n {
        if rng.gen_bool(0.7) {
            head[order[k]] = order[rng.gen_range(0..k)];
        }
    }
    ArgTree::from_heads(head).unwrap()
}

pub fn synthetic_essay(id: &str, tree: ArgTree, corpus: SourceCorpus) -> Essay {
    let texts = (0..tree.n())
        .map(|i| format!("{id} sentence {i} about topic {}", i * 7 % 5))
        .collect();
    Essay::new(id, texts, tree, corpus).unwrap()
}

pub fn synthetic_corpus(seed: u64, count: usize, sizes: std::ops::RangeInclusive<usize>) -> Vec<Essay> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let n = rng.gen_range(sizes.clone());
            let non_ac = rng.gen_range(0..=(n - 1).min(3));
            let tree = random_tree(&mut rng, n, non_ac);
            synthetic_essay(&format!("e{seed}-{k}"), tree, SourceCorpus::InDomain)
        })
        .collect()
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_REL_TOL: f64 = 1e-3;
pub const FD_ABS_TOL: f64 = 1e-6;

/// Checks every scalar of every tensor and returns each (tensor, index,
/// analytic, numeric) mismatch.
pub fn gradient_mismatches(
    params: &ModelParams,
    eval_loss: &dyn Fn(&ModelParams) -> f64,
    analytic: &ModelParams,
) -> Vec<(String, usize, f64, f64)> {
    let mut failures = Vec::new();
    let mut probe = params.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    for (t, name) in names.iter().enumerate() {
        let len = params.tensors()[t].1.len();
        for k in 0..len {
            let orig = params.tensors()[t].1.as_slice().unwrap()[k];
            set_scalar(&mut probe, t, k, orig + FD_STEP);
            let up = eval_loss(&probe);
            set_scalar(&mut probe, t, k, orig - FD_STEP);
            let down = eval_loss(&probe);
            set_scalar(&mut probe, t, k, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.tensors()[t].1.as_slice().unwrap()[k];
            let diff = (a - numeric).abs();
            if diff > FD_ABS_TOL && diff > FD_REL_TOL * a.abs().max(numeric.abs()) {
                failures.push((name.clone(), k, a, numeric));
            }
        }
    }
    failures
}

fn set_scalar(p: &mut ModelParams, tensor: usize, k: usize, v: f64) {
    let mut ts = p.tensors_mut();
    ts[tensor].1.as_slice_mut().unwrap()[k] = v;
}

