use kge_core::ingest::*;
use kge_core::progress::{CollectSink, NullSink};
use kge_core::vocab::{build_vocab, build_vocab_parallel};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Line {
    Valid(u8, u8, u8),
    Blank,
    Comment,
    Literal(u8),
    MissingDot(u8),
}

fn line() -> impl Strategy<Value = Line> {
    prop_oneof![
        6 => (0u8..20, 0u8..4, 0u8..20).prop_map(|(h, r, t)| Line::Valid(h, r, t)),
        1 => Just(Line::Blank),
        1 => Just(Line::Comment),
        1 => (0u8..20).prop_map(Line::Literal),
        1 => (0u8..20).prop_map(Line::MissingDot),
    ]
}

fn render(lines: &[Line], crlf: bool) -> (Vec<u8>, Vec<RawTriple>, Vec<(u64, &'static str)>) {
    let eol = if crlf { "\r\n" } else { "\n" };
    let mut bytes = Vec::new();
    let mut triples = Vec::new();
    let mut errors = Vec::new();
    for l in lines {
        let start = bytes.len() as u64;
        let text = match *l {
            Line::Valid(h, r, t) => {
                triples.push(RawTriple::new(format!("e{h}"), format!("r{r}"), format!("e{t}")));
                format!("<e{h}> <r{r}> <e{t}> .")
            }
            Line::Blank => String::new(),
            Line::Comment => "# note".into(),
            Line::Literal(h) => {
                errors.push((start, LITERAL_OBJECT_UNSUPPORTED));
                format!("<e{h}> <name> \"x\" .")
            }
            Line::MissingDot(h) => {
                errors.push((start, "missing-dot"));
                format!("<e{h}> <r0> <e0>")
            }
        };
        bytes.extend_from_slice(text.as_bytes());
        bytes.extend_from_slice(eol.as_bytes());
    }
    (bytes, triples, errors)
}

proptest! {
    #[test]
    fn chunking_never_changes_the_parse(lines in prop::collection::vec(line(), 0..120), n in 1usize..24, crlf: bool) {
        let (bytes, triples, errors) = render(&lines, crlf);
        let reference = parse_parallel(&bytes, Format::NTriples, 1, &mut NullSink);
        let out = parse_parallel(&bytes, Format::NTriples, n, &mut NullSink);
        prop_assert_eq!(&out, &reference);
        prop_assert_eq!(&out.triples, &triples);
        let got: Vec<_> = out.errors.iter().map(|e| (e.offset, e.reason)).collect();
        prop_assert_eq!(got, errors);
        prop_assert_eq!(out.line_count(), lines.len());
    }

    #[test]
    fn chunks_tile_the_input_on_line_starts(bytes in prop::collection::vec(prop_oneof![Just(b'\n'), Just(b'a')], 0..300), n in 1usize..20) {
        let chunks = chunk_bytes(&bytes, n);
        prop_assert!(chunks.len() <= n.max(1));
        let mut pos = 0u64;
        for c in &chunks {
            prop_assert_eq!(c.byte_start, pos);
            prop_assert!(c.byte_end >= c.byte_start);
            if c.byte_start > 0 {
                prop_assert_eq!(bytes[c.byte_start as usize - 1], b'\n');
            }
            pos = c.byte_end;
        }
        prop_assert_eq!(pos, bytes.len() as u64);
    }

    #[test]
    fn parallel_vocab_equals_sequential(lines in prop::collection::vec(line(), 1..80)) {
        let (bytes, _, _) = render(&lines, false);
        let out = parse_parallel(&bytes, Format::NTriples, 4, &mut NullSink);
        prop_assert_eq!(build_vocab_parallel(&out.triples), build_vocab(out.triples.iter()));
    }
}

#[test]
fn tsv_parses_like_ntriples() {
    let nt = b"<a> <r> <b> .\n<b> <r> <c> .\n";
    let tsv = b"a\tr\tb\nb\tr\tc\n";
    let x = parse_parallel(nt, Format::NTriples, 2, &mut NullSink);
    let y = parse_parallel(tsv, Format::Tsv, 2, &mut NullSink);
    assert_eq!(x.triples, y.triples);
}

#[test]
fn chunk_records_cover_the_file() {
    let (bytes, _, _) = render(&vec![Line::Valid(1, 2, 3); 50], false);
    let mut sink = CollectSink::default();
    let out = parse_parallel(&bytes, Format::NTriples, 4, &mut sink);
    assert_eq!(sink.chunks.len(), 4);
    assert_eq!(sink.chunks.iter().map(|c| c.triples).sum::<usize>(), out.triples.len());
    assert_eq!(sink.chunks.last().unwrap().byte_end, bytes.len() as u64);
}
