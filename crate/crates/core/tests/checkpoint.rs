use xinggan_core::nets::Variant;
use xinggan_core::train::{Checkpoint, TrainConfig, Trainer};
use xinggan_core::Error;

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k + cout
}

fn weight(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k * k
}

fn norm(c: usize) -> usize {
    2 * c
}

fn encoder(cin: usize, c: usize) -> usize {
    weight(cin, c / 2, 3) + norm(c / 2) + weight(c / 2, c, 3) + norm(c)
}

fn upsampler(cin: usize, c: usize) -> usize {
    weight(cin, c / 2, 4) + norm(c / 2) + weight(c / 2, c / 4, 4) + norm(c / 4)
}

/// Closed-form parameter count of the full model: generator plus both
/// discriminators. The README documents the same formula.
fn analytic_count(c: usize, t: usize, n: usize) -> usize {
    let sa = 3 * c * c + 1;
    let as_ = 3 * c * c + 1 + conv(2 * c, c, 3);
    let decoder = upsampler(c, c) + conv(c / 4, 3 * n, 3);
    let generator = encoder(3, c) + encoder(36, c) + t * (sa + as_) + 2 * decoder + upsampler(2 * c, c) + conv(c / 4, 2 * n + 1, 1);
    let disc = |cin: usize| conv(cin, 64, 3) + conv(64, 128, 3) + conv(128, 256, 3) + conv(256, 512, 3) + conv(512, 1, 3);
    generator + disc(6) + disc(21)
}

fn desk() -> Checkpoint {
    Trainer::new(TrainConfig::default()).unwrap().into_checkpoint()
}

#[test]
fn desk_parameter_count_matches_formula() {
    let ck = desk();
    assert_eq!(ck.parameter_count(), analytic_count(64, 3, 4));
    let reloaded = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(reloaded.parameter_count(), analytic_count(64, 3, 4));
}

#[test]
fn round_trip_is_byte_identical() {
    let ck = desk();
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.xgck");
    ck.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
}

#[test]
fn header_layout() {
    let bytes = desk().to_bytes();
    assert_eq!(&bytes[0..4], b"XGCK");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let text = std::str::from_utf8(&bytes[12..12 + len]).unwrap();
    assert!(text.contains("master_seed=42\n"));
    assert!(text.ends_with("iteration=0\n"));
}

#[test]
fn corruption_is_reported_with_offsets() {
    let mut bytes = desk().to_bytes();
    let good = bytes.clone();
    bytes[0] = b'Y';
    match Checkpoint::from_bytes(&bytes) {
        Err(e @ Error::Checkpoint { offset: 0, .. }) => assert!(e.to_string().contains("\"XGCK\"")),
        other => panic!("{other:?}"),
    }
    let mut bytes = good.clone();
    bytes[4] = 2;
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint { offset: 4, .. })));
    let cut = good.len() - 3;
    match Checkpoint::from_bytes(&good[..cut]) {
        Err(Error::Checkpoint { offset, msg }) => {
            assert!(offset < cut && offset > 12, "{offset}");
            assert!(msg.contains("truncated"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
    let mut extra = good.clone();
    extra.push(0);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Checkpoint { .. })));
    assert!(Checkpoint::from_bytes(&good[..2]).is_err());
}

#[test]
fn variant_parameter_names() {
    for v in Variant::ALL {
        let cfg = TrainConfig {
            variant: v,
            channels: 8,
            ..TrainConfig::default()
        };
        let ck = Trainer::new(cfg).unwrap().into_checkpoint();
        let names: Vec<&str> = ck.generator.names().collect();
        let has = |s: &str| names.iter().any(|n| n.contains(s));
        assert_eq!(names.iter().any(|n| n.ends_with("as.beta")), v.has_as(), "{v}");
        assert_eq!(names.iter().any(|n| n.ends_with("sa.alpha")), v.has_sa(), "{v}");
        assert_eq!(has("gen.attn"), v == Variant::Full, "{v}");
    }
}
