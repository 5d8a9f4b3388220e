use std::fs;
use std::path::Path;

use proptest::prelude::*;
use qtrap::core::{ConfigId, PowerEvidence, PowerSample, TelemetryRecord};
use qtrap::schema::{parse_csv, parse_jsonl, to_jsonl, CSV_COLUMNS};

fn power() -> impl Strategy<Value = PowerEvidence> {
    prop_oneof![
        (1.0..1000.0f64).prop_map(|tdp_watts| PowerEvidence::TdpAnchor { tdp_watts }),
        (0.01..1e4f64)
            .prop_map(|joules_per_query| PowerEvidence::DirectJoules { joules_per_query }),
        prop::collection::vec((0.01..5.0f64, 1.0..800.0f64), 2..8).prop_map(|steps| {
            let mut t = 0.0;
            PowerEvidence::SampledTrace(
                steps
                    .into_iter()
                    .map(|(dt, watts)| {
                        let s = PowerSample {
                            t_offset_s: t,
                            watts,
                        };
                        t += dt;
                        s
                    })
                    .collect(),
            )
        }),
    ]
}

fn record(bits: u32, batch: u32) -> impl Strategy<Value = TelemetryRecord> {
    (
        "[a-z][a-z0-9-]{0,12}",
        1u64..1_000_000,
        0.1..1e4f64,
        1u64..10_000,
        0.0..=1.0f64,
        0.1..200.0f64,
        power(),
        prop::option::of(0.0..1000.0f64),
        prop::option::of("[ -~]{0,20}"),
    )
        .prop_map(
            move |(model, tokens, dur, n, acc, vram, power, grid, source)| TelemetryRecord {
                config: ConfigId {
                    model_name: model,
                    hardware: "gpu".into(),
                    precision_bits: bits,
                    batch_size: batch,
                    task: "task".into(),
                },
                total_tokens: tokens,
                duration_s: dur,
                sample_count: n,
                accuracy: acc,
                peak_vram_gb: vram,
                power,
                grid_gco2_per_kwh: grid,
                source,
            },
        )
}

fn records() -> impl Strategy<Value = Vec<TelemetryRecord>> {
    (record(4, 1), record(8, 2), record(16, 4)).prop_map(|(a, b, c)| vec![a, b, c])
}

proptest! {
    #[test]
    fn jsonl_round_trip(rs in records()) {
        let text = to_jsonl(&rs);
        let parsed = parse_jsonl(&text).unwrap();
        prop_assert_eq!(&parsed.records, &rs);
        prop_assert!(parsed.warnings.is_empty());
        prop_assert_eq!(to_jsonl(&parsed.records), text);
    }
}

#[test]
fn fixtures_round_trip_byte_for_byte() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/telemetry");
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        let parsed = parse_jsonl(&text).unwrap();
        assert_eq!(to_jsonl(&parsed.records), text, "{}", path.display());
    }
}

#[test]
fn csv_matches_jsonl() {
    let jsonl = concat!(
        r#"{"model":"m","hardware":"h","precision_bits":16,"batch_size":1,"task":"t","total_tokens":1000,"duration_s":10.0,"sample_count":10,"accuracy":0.5,"peak_vram_gb":10.0,"power":{"kind":"tdp","tdp_watts":300.0},"grid_gco2_per_kwh":400.0}"#,
        "\n",
        r#"{"model":"m","hardware":"h","precision_bits":4,"batch_size":1,"task":"t","total_tokens":1000,"duration_s":20.0,"sample_count":10,"accuracy":0.4,"peak_vram_gb":4.0,"power":{"kind":"joules","joules_per_query":80.0},"source":"bench"}"#,
        "\n",
    );
    let csv = format!(
        "{}\nm,h,16,1,t,1000,10.0,10,0.5,10.0,tdp,300.0,400.0,\nm,h,4,1,t,1000,20.0,10,0.4,4.0,joules,80.0,,bench\n",
        CSV_COLUMNS.join(",")
    );
    assert_eq!(
        parse_csv(&csv).unwrap().records,
        parse_jsonl(jsonl).unwrap().records
    );
}
