use super::*;
use crate::index::{RankWeights, RequiredConstraints};
use crate::profile::Placement;

fn config() -> RegistryConfig {
    RegistryConfig {
        dim: 32,
        subspaces: 4,
        anchors: 4,
        embedder: EmbedderConfig::hash(32),
        ..RegistryConfig::default()
    }
}

fn embedder() -> Embedder {
    Embedder::from_config(&config().embedder).unwrap()
}

fn doc(id: &str, skills: &[&str]) -> Vec<u8> {
    serde_json::to_vec(&serde_json::json!({
        "agent_id": id,
        "skills": skills,
        "roles": ["worker"],
        "constraints": {"latency_tolerance_ms": 100, "placement": "edge", "memory_capacity_mb": 512, "current_load": 0.25},
    }))
    .unwrap()
}

fn populated() -> (RegistryState, Vec<RegistryEvent>) {
    let e = embedder();
    let mut s = RegistryState::new(config());
    let mut log = Vec::new();
    let agents = [
        ("a1", vec!["path planning", "obstacle avoidance"]),
        ("a2", vec!["image captioning"]),
        ("a3", vec!["speech transcription", "translation"]),
        ("a4", vec!["sql query generation"]),
    ];
    for (i, (id, skills)) in agents.iter().enumerate() {
        let (next, ev, _) = s.register_agent(&e, &doc(id, skills), 1000 + i as u64).unwrap();
        s = next;
        log.push(ev);
    }
    (s, log)
}

#[test]
fn first_registration_bootstraps_codebook() {
    let e = embedder();
    let (s, ev, reg) = RegistryState::new(config()).register_agent(&e, &doc("x", &["routing"]), 5).unwrap();
    assert_eq!(ev.seq, 1);
    assert_eq!(reg.seq, 1);
    let cb = s.codebook().unwrap();
    assert_eq!(cb.subspaces(), 4);
    assert_eq!(cb.k_max(), 16);
    // The lone agent is reconstructed exactly.
    let v = s.embed_profile(&e, &s.index().get("x").unwrap().profile).unwrap();
    let r = cb.reconstruct(&reg.code).unwrap();
    for (a, b) in v.values().iter().zip(&r) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn duplicate_and_unknown_ids() {
    let (s, _) = populated();
    let e = embedder();
    assert!(matches!(
        s.register_agent(&e, &doc("a1", &["x"]), 0),
        Err(RegistryError::DuplicateId(_))
    ));
    assert!(matches!(s.deregister_agent(&e, "zz", 0), Err(RegistryError::UnknownId(_))));
    assert!(matches!(
        s.update_agent(&e, "zz", &doc("zz", &["x"]), 0),
        Err(RegistryError::UnknownId(_))
    ));
    assert!(matches!(
        s.record_endorsement(&e, "zz", 0.5, 0),
        Err(RegistryError::UnknownId(_))
    ));
}

#[test]
fn invalid_profile_leaves_state_untouched() {
    let (s, _) = populated();
    let bad = br#"{"agent_id": "b", "skills": []}"#;
    assert!(matches!(
        s.register_agent(&embedder(), bad, 0),
        Err(RegistryError::Profile(ProfileError::EmptySkills))
    ));
    assert_eq!(s.len(), 4);
    assert_eq!(s.last_seq(), 4);
}

#[test]
fn endorsement_moving_average() {
    let (s, _) = populated();
    let e = embedder();
    let (s, _) = s.record_endorsement(&e, "a2", 1.0, 0).unwrap();
    let c = s.index().get("a2").unwrap().profile.credibility;
    assert!((c - 0.55).abs() < 1e-12);
    let (s, _) = s.record_endorsement(&e, "a2", 0.0, 0).unwrap();
    let c = s.index().get("a2").unwrap().profile.credibility;
    assert!((c - 0.495).abs() < 1e-12);
    assert!(matches!(
        s.record_endorsement(&e, "a2", 1.5, 0),
        Err(RegistryError::OutOfRangeValue { field: "score", .. })
    ));
}

#[test]
fn update_keeps_credibility_and_registration_seq() {
    let (s, _) = populated();
    let e = embedder();
    let (s, _) = s.record_endorsement(&e, "a3", 1.0, 0).unwrap();
    let (s, ev) = s
        .update_agent(&e, "a3", br#"{"skills": ["speech synthesis"]}"#, 0)
        .unwrap();
    let entry = s.index().get("a3").unwrap();
    assert_eq!(ev.kind, EventKind::Update);
    assert_eq!(entry.profile.skills, vec!["speech synthesis".to_string()]);
    assert!((entry.profile.credibility - 0.55).abs() < 1e-12);
    assert_eq!(entry.registered_seq, 3);
    assert!(matches!(
        s.update_agent(&e, "a3", &doc("other", &["x"]), 0),
        Err(RegistryError::InvalidEvent(_))
    ));
}

#[test]
fn query_finds_matching_agent() {
    let (s, _) = populated();
    let res = s
        .query(&embedder(), &QuerySpec::new("obstacle avoidance and path planning", 3))
        .unwrap();
    assert_eq!(res.len(), 3);
    assert_eq!(res[0].agent_id, "a1");
    for w in res.windows(2) {
        assert!(w[0].fused >= w[1].fused);
    }
}

#[test]
fn query_strict_constraints_filter() {
    let (s, _) = populated();
    let req = RequiredConstraints {
        placement: Some(Placement::Cloud),
        ..RequiredConstraints::default()
    };
    let spec = QuerySpec::new("path planning", 4).with_required(req.clone(), true);
    assert!(s.query(&embedder(), &spec).unwrap().is_empty());
    let spec = QuerySpec::new("path planning", 4).with_required(req, false);
    let res = s.query(&embedder(), &spec).unwrap();
    assert_eq!(res.len(), 4);
    assert!(res.iter().all(|r| r.ctx_score == 0.0));
}

#[test]
fn query_empty_registry_is_empty() {
    let s = RegistryState::new(config());
    let spec = QuerySpec::new("anything", 5).with_weights(RankWeights::semantic_only());
    assert!(s.query(&embedder(), &spec).unwrap().is_empty());
}

#[test]
fn replay_reproduces_state() {
    let (s, mut log) = populated();
    let e = embedder();
    let (s, ev) = s.deregister_agent(&e, "a2", 0).unwrap();
    log.push(ev);
    let (s, ev) = s.record_endorsement(&e, "a4", 0.9, 0).unwrap();
    log.push(ev);
    let replayed = replay(RegistryState::new(config()), &log, &e).unwrap();
    assert_eq!(replayed.last_seq(), s.last_seq());
    assert_eq!(replayed.codebook().unwrap().to_bytes(), s.codebook().unwrap().to_bytes());
    let a: Vec<_> = s.index().iter().cloned().collect();
    let b: Vec<_> = replayed.index().iter().cloned().collect();
    assert_eq!(a, b);
}

#[test]
fn apply_rejects_sequence_gaps() {
    let (s, log) = populated();
    let mut ev = log[0].clone();
    ev.seq = 10;
    assert!(matches!(s.apply(&embedder(), &ev), Err(RegistryError::InvalidEvent(_))));
}

#[test]
fn snapshot_restore_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = populated();
    snapshot(&s, dir.path()).unwrap();
    let (r, events) = restore(dir.path(), &config(), &embedder()).unwrap();
    assert!(events.is_empty());
    assert_eq!(r.last_seq(), 4);
    let a: Vec<_> = s.index().iter().cloned().collect();
    let b: Vec<_> = r.index().iter().cloned().collect();
    assert_eq!(a, b);
    let spec = QuerySpec::new("translation of speech", 4);
    assert_eq!(s.query(&embedder(), &spec).unwrap(), r.query(&embedder(), &spec).unwrap());
}

#[test]
fn corrupted_snapshot_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = populated();
    let snap = snapshot(&s, dir.path()).unwrap();
    let path = snap.join(CODES_FILE);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 6;
    bytes[last] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(
        restore(dir.path(), &config(), &embedder()),
        Err(RegistryError::CorruptSnapshot(_))
    ));
}

#[test]
fn future_snapshot_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = populated();
    let snap = snapshot(&s, dir.path()).unwrap();
    let path = snap.join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    m["format_version"] = 99.into();
    std::fs::write(&path, serde_json::to_vec(&m).unwrap()).unwrap();
    assert!(matches!(
        restore(dir.path(), &config(), &embedder()),
        Err(RegistryError::VersionSkew(99))
    ));
}

#[test]
fn mismatched_geometry_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let (s, _) = populated();
    snapshot(&s, dir.path()).unwrap();
    let other = RegistryConfig {
        subspaces: 8,
        ..config()
    };
    assert!(matches!(
        restore(dir.path(), &other, &embedder()),
        Err(RegistryError::ConfigMismatch(_))
    ));
}

#[test]
fn torn_final_log_line_is_ignored() {
    let dir = tempfile::tempdir().unwrap();
    let (_, log) = populated();
    let mut text = String::new();
    for e in &log {
        text.push_str(&serde_json::to_string(e).unwrap());
        text.push('\n');
    }
    text.push_str("{\"seq\":5,\"kind\":\"reg");
    let path = dir.path().join(EVENT_LOG_FILE);
    std::fs::write(&path, text).unwrap();
    assert_eq!(read_event_log(&path).unwrap().len(), 4);
}

#[test]
fn event_wire_format() {
    let ev = RegistryEvent {
        seq: 3,
        kind: EventKind::Endorse,
        agent_id: "a".into(),
        payload: serde_json::json!({"score": 0.5}),
        ts: 7,
    };
    assert_eq!(
        serde_json::to_string(&ev).unwrap(),
        r#"{"seq":3,"kind":"endorse","agent_id":"a","payload":{"score":0.5},"ts":7}"#
    );
}

#[test]
fn codes_pack_one_byte_per_subspace() {
    let (s, _) = populated();
    // magic + version + n + M + width + body + crc
    assert_eq!(write_codes(&s).len(), 4 + 4 + 4 + 4 + 1 + 4 * 4 + 4);
}

#[test]
fn registry_service_persists_and_feeds() {
    let dir = tempfile::tempdir().unwrap();
    {
        let r = Registry::open(dir.path(), config()).unwrap();
        r.register_agent(&doc("a", &["map building"])).unwrap();
        r.register_agent(&doc("b", &["route scheduling"])).unwrap();
        r.record_endorsement("a", 1.0).unwrap();
        assert_eq!(r.event_feed(0).len(), 3);
        assert_eq!(r.event_feed(2).len(), 1);
        assert!(r.event_feed(3).is_empty());
        r.snapshot().unwrap();
        r.deregister_agent("b").unwrap();
    }
    let r = Registry::open(dir.path(), config()).unwrap();
    assert_eq!(r.len(), 1);
    assert_eq!(r.state().last_seq(), 4);
    assert_eq!(r.event_feed(0).len(), 4);
    let res = r.query(&QuerySpec::new("map building", 1)).unwrap();
    assert_eq!(res[0].agent_id, "a");
}

#[test]
fn registry_service_rejects_embedder_dim_mismatch() {
    let cfg = RegistryConfig {
        embedder: EmbedderConfig::hash(16),
        ..config()
    };
    assert!(matches!(Registry::in_memory(cfg), Err(RegistryError::ConfigMismatch(_))));
}

#[test]
fn set_adapter_checks_dimension() {
    let r = Registry::in_memory(config()).unwrap();
    assert!(r.set_adapter(QueryAdapter::identity(8)).is_err());
    r.set_adapter(QueryAdapter::identity(32)).unwrap();
}
