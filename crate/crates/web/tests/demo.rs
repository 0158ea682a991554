use dist_tse_web::{drr_vs_distance, explore_rir, oracle_sweep, DrrRequest, RirRequest, RoomParams, SweepRequest};

#[test]
fn explorer_reports_direct_path_and_decay() {
    let req: RirRequest = serde_json::from_str(r#"{"source": [5.0, 6.0, 1.6]}"#).unwrap();
    assert_eq!(req.room, RoomParams::default());
    let v = explore_rir(&req).unwrap();
    let expected = (1.5f64.powi(2) + 2.0f64.powi(2) + 0.5f64.powi(2)).sqrt();
    assert!((v.distance - expected).abs() < 1e-12);
    assert_eq!(v.direct_index, (expected / 343.0 * 16_000.0).round() as usize);
    assert_eq!(v.decay_db.len(), v.ir.len());
    assert_eq!(v.decay_db[0], 0.0);
    assert!(v.decay_db.windows(2).all(|w| w[1] <= w[0]));
    assert!((v.rt60_estimate - 0.2).abs() < 0.05, "{}", v.rt60_estimate);
    // serializes without non-finite values
    assert!(!serde_json::to_string(&v).unwrap().contains("null"));
}

#[test]
fn drr_falls_with_distance() {
    let req = DrrRequest {
        room: RoomParams::default(),
        count: 30,
        min_distance: 0.5,
        max_distance: 4.5,
    };
    let v = drr_vs_distance(&req).unwrap();
    assert_eq!(v.points.len(), 30);
    assert!(v.points.iter().all(|p| (0.5 - 1e-9..=4.5 + 1e-9).contains(&p.distance)));
    assert!(v.spearman < -0.5, "{}", v.spearman);
    assert!(v.db_per_decade < 0.0);
}

#[test]
fn unreachable_distance_is_rejected() {
    let req = DrrRequest {
        room: RoomParams::default(),
        count: 3,
        min_distance: 9.0,
        max_distance: 9.5,
    };
    assert!(drr_vs_distance(&req).is_err());
}

#[test]
fn oracle_sweep_finds_a_speaker() {
    let v = oracle_sweep(&SweepRequest::default()).unwrap();
    assert_eq!(v.grid.len(), 10);
    assert_eq!(v.error, Some(0.0), "{v:?}");
}
