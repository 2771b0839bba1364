mod common;

use std::io::Cursor;

use gazeshare::protocol::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn roundtrip(env: &Envelope) -> Envelope {
    match decode(encode(env).as_bytes()).unwrap() {
        Decoded::Message(e) => e,
        other => panic!("{other:?}"),
    }
}

proptest! {
    #[test]
    fn encode_decode_is_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = common::envelope(&mut rng);
        let back = roundtrip(&env);
        prop_assert!(common::same_bits(&env, &back), "{env:?} vs {back:?}");
    }

    #[test]
    fn frames_are_single_lines(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let line = encode(&common::envelope(&mut rng));
        prop_assert_eq!(line.matches('\n').count(), 1);
        prop_assert!(line.ends_with('\n'));
    }

    #[test]
    fn corruption_never_swallows_neighbours(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean: Vec<Envelope> = (0..n).map(|_| common::envelope(&mut rng)).collect();
        let mut stream = Vec::new();
        let mut corrupted = 0;
        for env in &clean {
            if rand::Rng::random_bool(&mut rng, 0.4) {
                let line = encode(&common::envelope(&mut rng));
                stream.extend(common::corrupt(&mut rng, line.trim_end()));
                stream.push(b'\n');
                corrupted += 1;
            }
            stream.extend(encode(env).as_bytes());
        }
        let mut reader = FrameReader::new(Cursor::new(stream));
        let got: Vec<Envelope> = reader.by_ref().map(Result::unwrap).collect();
        prop_assert_eq!(got, clean);
        prop_assert_eq!(reader.stats().malformed, corrupted);
    }
}

/// Every example in the protocol document decodes and re-encodes to the
/// same bytes.
#[test]
fn documented_examples_are_exact() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/protocol.md")).unwrap();
    let mut in_block = false;
    let mut kinds = Vec::new();
    for line in doc.lines() {
        match line.trim() {
            "```ndjson" => in_block = true,
            "```" => in_block = false,
            l if in_block && !l.is_empty() => {
                let Decoded::Message(env) = decode(l.as_bytes()).unwrap() else { panic!("unknown kind in {l}") };
                assert_eq!(encode(&env), format!("{l}\n"));
                kinds.push(env.body.kind());
            }
            _ => {}
        }
    }
    kinds.sort_unstable();
    kinds.dedup();
    assert_eq!(kinds, ["bye", "detection", "gaze", "grant", "heartbeat", "hello", "reject", "state"]);
}

#[test]
fn unknown_kinds_and_blank_lines_are_skipped() {
    let input = "\n{\"v\":1,\"type\":\"telepathy\",\"seq\":4,\"t_mono_s\":1.0,\"payload\":{\"x\":1}}\n  \n\
                 {\"v\":1,\"type\":\"heartbeat\",\"seq\":5,\"t_mono_s\":1.5,\"payload\":{}}\r\n";
    let mut r = FrameReader::new(Cursor::new(input));
    let env = r.next().unwrap().unwrap();
    assert_eq!(env.seq, 5);
    assert!(r.next().is_none());
    assert_eq!(r.stats(), LineStats { decoded: 1, unknown: 1, malformed: 0, blank: 2 });
}

#[test]
fn version_mismatch_is_fatal_even_for_unknown_kinds() {
    for line in [
        r#"{"v":2,"type":"heartbeat","seq":1,"t_mono_s":0.0,"payload":{}}"#,
        r#"{"v":0,"type":"whatever","seq":1,"t_mono_s":0.0,"payload":{}}"#,
    ] {
        let e = decode(line.as_bytes()).unwrap_err();
        assert!(e.is_fatal(), "{line}");
    }
    let e = decode(br#"{"v":1,"type":"gaze","seq":1,"t_mono_s":0.0,"payload":{}}"#).unwrap_err();
    assert!(!e.is_fatal());
}

#[test]
fn oversized_lines_are_dropped() {
    let mut input = vec![b' '; MAX_LINE_BYTES];
    input.insert(0, b'{');
    input.push(b'\n');
    input.extend(br#"{"v":1,"type":"heartbeat","seq":1,"t_mono_s":0.0,"payload":{}}"#);
    let mut r = FrameReader::new(Cursor::new(input));
    assert_eq!(r.next().unwrap().unwrap().seq, 1);
    assert_eq!(r.stats().malformed, 1);
}

#[test]
fn sequence_gaps_are_counted() {
    let mut t = SeqTracker::default();
    for s in [1, 2, 5, 3, 6] {
        t.observe(s);
    }
    // 3 -> 6 counts again: tracking follows the last seen number
    assert_eq!(t.gaps, 2);
    assert_eq!(t.missing, 4);
    assert_eq!(t.regressions, 1);
}
