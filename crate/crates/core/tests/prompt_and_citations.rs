//! Prompt layout and citation extraction properties.

use std::collections::BTreeSet;

use proptest::prelude::*;
use scholarag_core::compose::{
    compose_prompt, ComposeOptions, EvidenceKind, EvidenceSet, EvidenceSource, InstructionSet,
};
use scholarag_core::generate::extract_citations;
use scholarag_core::router::TaskLabel;

fn task() -> impl Strategy<Value = TaskLabel> {
    prop::sample::select(vec![
        TaskLabel::GeneralQA,
        TaskLabel::Simplification,
        TaskLabel::Summarization,
    ])
}

fn kind() -> impl Strategy<Value = EvidenceKind> {
    prop::sample::select(vec![
        EvidenceKind::TextChunk,
        EvidenceKind::PaperFullText,
        EvidenceKind::InlineText,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prompt_is_instruction_evidence_query(
        t in task(),
        query in "[A-Za-z][A-Za-z0-9 ,?\u{e9}]{0,60}[a-z?]",
        bodies in prop::collection::vec(("[a-z \u{3b1}\u{4e2d}.]{1,80}", kind(), prop::option::of("[A-Z][a-z ]{2,30}")), 0..8),
    ) {
        let items: Vec<_> = bodies
            .iter()
            .enumerate()
            .map(|(i, (body, kind, title))| {
                let source = EvidenceSource { title: title.clone(), paper_id: Some(format!("p{}", i % 3)), ..Default::default() };
                (*kind, format!("payload#{i}# {body}"), source)
            })
            .collect();
        let m = items.len();
        let instructions = InstructionSet::default();
        let instruction = instructions.get(t).to_string();
        let p = compose_prompt(&query, EvidenceSet::new(t, items.clone()), &instructions, ComposeOptions::default()).unwrap();

        prop_assert!(p.text.starts_with(&instruction) && p.text.len() > instruction.len());
        prop_assert!(p.text.ends_with(&query) && p.text.len() > query.len());
        prop_assert_eq!(p.ungrounded, m == 0);
        let refs: Vec<u32> = p.evidence.items().iter().map(|i| i.ref_no).collect();
        prop_assert_eq!(refs, (1..=m as u32).collect::<Vec<_>>());
        for (_, payload, _) in &items {
            prop_assert_eq!(p.text.matches(payload.as_str()).count(), 1);
        }
        let middle = &p.text[instruction.len()..p.text.len() - query.len()];
        if m == 0 {
            prop_assert_eq!(middle, "\n\n");
        } else {
            prop_assert!(middle.starts_with("\n\n") && middle.ends_with("\n\n"));
            let mut pos = 0;
            for n in 1..=m {
                let at = middle[pos..].find(&format!("[{n}] payload#{}#", n - 1));
                prop_assert!(at.is_some(), "ref {} out of order", n);
                pos += at.unwrap();
            }
        }
    }
}

/// Scans for `[n]` and `[n, m, ...]` markers by hand.
fn oracle_markers(text: &str) -> Vec<u32> {
    let c: Vec<char> = text.chars().collect();
    let skip_ws = |mut j: usize| {
        while j < c.len() && c[j].is_whitespace() {
            j += 1;
        }
        j
    };
    let digits = |j: usize| {
        let mut e = j;
        while e < c.len() && c[e].is_ascii_digit() {
            e += 1;
        }
        let n = e - j;
        (1..=9).contains(&n).then(|| {
            (
                c[j..e].iter().collect::<String>().parse::<u32>().unwrap(),
                e,
            )
        })
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < c.len() {
        if c[i] == '[' {
            let mut nums = Vec::new();
            let mut j = skip_ws(i + 1);
            if let Some((n, e)) = digits(j) {
                nums.push(n);
                j = e;
                loop {
                    let save = j;
                    let k = skip_ws(j);
                    if k < c.len() && c[k] == ',' {
                        if let Some((n, e)) = digits(skip_ws(k + 1)) {
                            nums.push(n);
                            j = e;
                            continue;
                        }
                    }
                    j = save;
                    break;
                }
                let k = skip_ws(j);
                if k < c.len() && c[k] == ']' {
                    out.extend(nums);
                    i = k + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

fn noisy_text() -> impl Strategy<Value = String> {
    let atoms = prop::sample::select(vec![
        "[",
        "]",
        ",",
        " ",
        "\n",
        "0",
        "1",
        "2",
        "3",
        "7",
        "9",
        "12",
        "1234567890",
        "\u{663}",
        "x",
        "see",
        "[1]",
        "[2, 3]",
        "[ 4 ]",
        "[1][5]",
        "[10]",
        "[-1]",
        "[1.5]",
        "(6)",
        "\u{ff3b}1\u{ff3d}",
    ]);
    prop::collection::vec(atoms, 0..40).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn citations_stay_in_range(text in noisy_text(), m in 0usize..12) {
        let got = extract_citations(&text, m);
        prop_assert!(got.citations.iter().all(|&n| n >= 1 && n as usize <= m));
        let all = oracle_markers(&text);
        let expected: BTreeSet<u32> = all.iter().copied().filter(|&n| n >= 1 && n as usize <= m).collect();
        prop_assert_eq!(&got.citations, &expected);
        let mut dropped = Vec::new();
        for n in all.into_iter().filter(|n| !expected.contains(n)) {
            if !dropped.contains(&n) {
                dropped.push(n);
            }
        }
        prop_assert_eq!(got.dropped, dropped);
    }
}
