use std::collections::BTreeMap;

use rand::Rng;

use argn_core::metrics::evaluate;
use argn_core::pipeline::{fit_model, RunConfig};
use argn_core::rng::substream;
use argn_core::sampler::{encode_conditions, impute, synthesize, GenerationRequest, PartialTable};
use argn_core::schema::{infer_schema, ColumnKind, RawTable};

fn table(n: usize, seed: u64) -> RawTable {
    let mut rng = substream(seed, &[]);
    let rows = (0..n)
        .map(|_| {
            let city = ["vienna", "graz", "linz"][rng.random_range(0..3)];
            let (lat, lon) = match city {
                "vienna" => (48.2, 16.37),
                "graz" => (47.07, 15.44),
                _ => (48.3, 14.29),
            };
            let size: f64 = rng.random_range(20.0..150.0);
            vec![
                Some(city.to_string()),
                Some(format!("{:.4}", lat + rng.random_range(-0.05..0.05))),
                Some(format!("{:.4}", lon + rng.random_range(-0.05..0.05))),
                Some(format!("{:.1}", size)),
                if rng.random_bool(0.1) { None } else { Some(format!("{}", (size * 12.0) as i64)) },
            ]
        })
        .collect();
    RawTable::new(["city", "lat", "lon", "size", "rent"].map(String::from).to_vec(), rows).unwrap()
}

fn config() -> RunConfig {
    let cfg = RunConfig::from_json(
        r#"{
            "overrides": {"location": {"kind": "latlong", "lat": "lat", "lon": "lon"}},
            "encoding": {"min_tile_count": 20},
            "train": {"max_epochs": 40, "batch_size": 64, "initial_lr": 0.01}
        }"#,
    )
    .unwrap();
    cfg.with_seed(2)
}

#[test]
fn end_to_end_with_geo_and_missing_values() {
    let raw = table(600, 1);
    let cfg = config();
    let schema = infer_schema(&raw, &cfg.overrides).unwrap();
    assert_eq!(schema.column("location").unwrap().kind, ColumnKind::Latlong);
    let model = fit_model(&raw, &cfg).unwrap();
    let syn = synthesize(&model, &GenerationRequest::new(300, 3)).unwrap();
    assert_eq!(syn.header, raw.header);
    assert_eq!(syn.row_count(), 300);
    let rent = syn.column_index("rent").unwrap();
    assert!(syn.rows.iter().any(|r| r[rent].is_none()));
    let lat = syn.column_index("lat").unwrap();
    assert!(syn.rows.iter().all(|r| r[lat].as_deref().map_or(true, |v| v.parse::<f64>().is_ok())));
    assert_eq!(syn, synthesize(&model, &GenerationRequest::new(300, 3)).unwrap());
}

#[test]
fn conditions_are_respected() {
    let raw = table(400, 2);
    let model = fit_model(&raw, &config()).unwrap();
    let mut req = GenerationRequest::new(100, 4);
    req.conditions = encode_conditions(&model, &[("city".into(), "graz".into())]).unwrap();
    let syn = synthesize(&model, &req).unwrap();
    assert!(syn.rows.iter().all(|r| r[0].as_deref() == Some("graz")));
    assert!(encode_conditions(&model, &[("city".into(), "paris".into())]).is_err());
}

#[test]
fn imputation_keeps_observed_cells() {
    let raw = table(400, 3);
    let model = fit_model(&raw, &config()).unwrap();
    let encoded = model.encoders.encode_table(&raw.select_rows(&[0, 1, 2])).unwrap();
    let rows: Vec<Vec<Option<u32>>> = encoded
        .rows()
        .map(|r| r.iter().enumerate().map(|(i, &v)| if i % 2 == 0 { Some(v) } else { None }).collect())
        .collect();
    let partial = PartialTable { sub_columns: model.sub_columns.clone(), rows };
    let filled = impute(&model, &partial, 1.0, 5).unwrap();
    for (r, row) in filled.rows().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if i % 2 == 0 {
                assert_eq!(v, encoded.row(r)[i]);
            }
        }
    }
}

#[test]
fn evaluation_report_fields() {
    let real = table(400, 4);
    let hold = table(200, 5);
    let model = fit_model(&real, &config()).unwrap();
    let syn = synthesize(&model, &GenerationRequest::new(400, 6)).unwrap();
    let schema = infer_schema(&real, &BTreeMap::new()).unwrap();
    let plain = evaluate(&real, &syn, &schema, None, None, 0).unwrap();
    assert!(plain.dcr_integral.is_none() && plain.ml_efficiency.is_none());
    assert!(plain.jsd_mean.unwrap() < 0.2);
    let json = serde_json::to_value(&plain).unwrap();
    assert!(json.get("dcr_integral").is_none() && json.get("detection_auc").is_some());
    let full = evaluate(&real, &syn, &schema, Some(&hold), Some("rent"), 0).unwrap();
    assert!(full.dcr_integral.is_some() && full.ml_efficiency.is_some());
}
