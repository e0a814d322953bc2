use std::path::Path;

use gcfc::corpus_io::{format_corpus, parse_corpus, read_corpus, write_corpus};
use gcfc::Error;
use gcfc_core::corpus::{generate_synthetic, Corpus, CorpusHeader, Dialogue, ModalityDims, SyntheticConfig, Utterance};
use proptest::prelude::*;

fn parse(text: &str) -> gcfc::Result<Corpus> {
    parse_corpus(text.as_bytes(), Path::new("mem.jsonl"))
}

fn line_of(e: Error) -> usize {
    match e {
        Error::Parse { line, .. } => line,
        other => panic!("expected a parse error, got {other}"),
    }
}

const HEADER: &str = r#"{"format":"gcfc-corpus-v1","labels":["Happy","Sad"],"dims":{"t":2,"a":1,"v":1}}"#;

#[test]
fn synthetic_corpus_round_trips_through_a_file() {
    let corpus = generate_synthetic(
        &SyntheticConfig {
            dialogues: 5,
            ..Default::default()
        },
        3,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    write_corpus(&path, &corpus).unwrap();
    assert_eq!(read_corpus(&path).unwrap(), corpus);
}

#[test]
fn reads_the_documented_layout() {
    let text = format!(
        "{HEADER}\n{}\n\n",
        r#"{"id":"d1","speakers":2,"utterances":[{"speaker":1,"label":"Sad","t":[0.5,-1],"a":[2],"v":[1e-3]}]}"#
    );
    let c = parse(&text).unwrap();
    assert_eq!(c.header.labels, ["Happy", "Sad"]);
    let u = &c.dialogues[0].utterances[0];
    assert_eq!((u.speaker, u.label), (1, 1));
    assert_eq!(
        (u.text.clone(), u.acoustic.clone(), u.visual.clone()),
        (vec![0.5, -1.0], vec![2.0], vec![1e-3])
    );
}

#[test]
fn errors_carry_the_line_number() {
    let good = r#"{"id":"d1","speakers":2,"utterances":[{"speaker":0,"label":"Happy","t":[0,0],"a":[0],"v":[0]}]}"#;
    let cases = [
        (
            r#"{"id":"d2","speakers":2,"utterances":[{"speaker":0,"label":"Angry","t":[0,0],"a":[0],"v":[0]}]}"#,
            3,
        ),
        (
            r#"{"id":"d2","speakers":2,"utterances":[{"speaker":0,"label":"Sad","t":[0],"a":[0],"v":[0]}]}"#,
            3,
        ),
        (
            r#"{"id":"d2","speakers":2,"utterances":[{"speaker":2,"label":"Sad","t":[0,0],"a":[0],"v":[0]}]}"#,
            3,
        ),
        (
            r#"{"id":"d1","speakers":2,"utterances":[{"speaker":0,"label":"Sad","t":[0,0],"a":[0],"v":[0]}]}"#,
            3,
        ),
        (r#"{"id":"d2","speakers":2,"utterances":[]}"#, 3),
        (
            r#"{"id":"d2","speakers":2,"utterances":[{"speaker":0,"label":"Sad","t":[0,0],"a":[0],"v":[0],"x":1}]}"#,
            3,
        ),
        ("not json", 3),
    ];
    for (bad, want) in cases {
        let err = parse(&format!("{HEADER}\n{good}\n{bad}\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("mem.jsonl:3:"), "{msg}");
        assert_eq!(line_of(err), want);
    }
}

#[test]
fn header_problems_point_at_line_one() {
    let wrong_format = r#"{"format":"other","labels":["A"],"dims":{"t":1,"a":1,"v":1}}"#;
    assert_eq!(line_of(parse(wrong_format).unwrap_err()), 1);
    let duplicate = r#"{"format":"gcfc-corpus-v1","labels":["A","A"],"dims":{"t":1,"a":1,"v":1}}"#;
    assert_eq!(line_of(parse(duplicate).unwrap_err()), 1);
    assert!(parse("").is_err());
}

#[test]
fn refuses_to_write_non_finite_features() {
    let mut c = generate_synthetic(
        &SyntheticConfig {
            dialogues: 1,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    c.dialogues[0].utterances[0].text[0] = f64::INFINITY;
    assert!(format_corpus(&c, &mut Vec::new()).is_err());
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
        Just(f64::MAX),
    ]
}

fn corpus() -> impl Strategy<Value = Corpus> {
    let dims = ModalityDims { t: 3, a: 1, v: 2 };
    let utterance =
        (0usize..3, 0usize..2, proptest::collection::vec(finite(), 6)).prop_map(|(speaker, label, f)| Utterance {
            speaker,
            label,
            text: f[..3].to_vec(),
            acoustic: f[3..4].to_vec(),
            visual: f[4..].to_vec(),
        });
    proptest::collection::vec(proptest::collection::vec(utterance, 1..4), 0..4).prop_map(move |ds| Corpus {
        header: CorpusHeader {
            labels: vec!["x\"y".into(), "Ünïcode".into()],
            dims,
        },
        dialogues: ds
            .into_iter()
            .enumerate()
            .map(|(i, utterances)| Dialogue {
                id: format!("d{i}"),
                speakers: 3,
                utterances,
            })
            .collect(),
    })
}

proptest! {
    #[test]
    fn round_trip_is_bit_exact(c in corpus()) {
        let mut buf = Vec::new();
        format_corpus(&c, &mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.header, c.header);
        for (a, b) in back.dialogues.iter().zip(&c.dialogues) {
            for (u, v) in a.utterances.iter().zip(&b.utterances) {
                let bits = |x: &[f64]| x.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
                prop_assert_eq!(bits(&u.text), bits(&v.text));
                prop_assert_eq!(bits(&u.acoustic), bits(&v.acoustic));
                prop_assert_eq!(bits(&u.visual), bits(&v.visual));
                prop_assert_eq!((u.speaker, u.label), (v.speaker, v.label));
            }
        }
        prop_assert_eq!(back.dialogues.len(), c.dialogues.len());
    }
}
