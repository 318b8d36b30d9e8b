use funfx_cli::{read_long, write_long};
use funfx_core::simlab::{generate_dataset, DgpConfig, VisitCount};

#[test]
fn generated_dataset_survives_csv() {
    for cfg in [
        DgpConfig {
            n: 20,
            grid_len: 101,
            seed: 4,
            ..Default::default()
        },
        DgpConfig {
            n: 7,
            grid_len: 13,
            tau: Some(8.0),
            visits: VisitCount::Uniform { lo: 5, hi: 9 },
            seed: 9,
            ..Default::default()
        },
    ] {
        let ds = generate_dataset(&cfg).unwrap();
        let mut buf = Vec::new();
        write_long(&ds, &mut buf).unwrap();
        assert_eq!(read_long(buf.as_slice(), false).unwrap(), ds);
    }
}

#[test]
fn shipped_fixture_matches_generator() {
    let ds = generate_dataset(&DgpConfig {
        n: 12,
        grid_len: 11,
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let text = std::fs::read(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/small.csv")).unwrap();
    assert_eq!(read_long(text.as_slice(), false).unwrap(), ds);
}
