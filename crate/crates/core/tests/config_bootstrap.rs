mod common;

use std::net::TcpListener;

use edurt::pipeline::params::{derive_preprocessing_flags, Param};
use edurt::pipeline::preprocess::{remove_silence, DEFAULT_SILENCE_THRESHOLD};
use edurt::pipeline::{ModuleParams, PipelineError};
use edurt::tiers::{bootstrap, load_config, ConfigError, TierError, TierIdentity};

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

pub fn invalid_property_aborts_before_binding() {
    let port = free_port();
    let dst_port = free_port();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("node.conf");
    std::fs::write(
        &path,
        format!(
            "node.id = gmt\ntiers.initial = GMT,DST,DGT,DWT\nmanage.listen = 127.0.0.1:{port}\n\
             dst.listen = 127.0.0.1:{dst_port}\nlease.ms = abc\n"
        ),
    )
    .unwrap();
    let err = load_config(&path).map_err(TierError::from).and_then(bootstrap).err().expect("must fail");
    match &err {
        TierError::Config(ConfigError::InvalidProperty { key, .. }) => assert_eq!(key, "lease.ms"),
        other => panic!("unexpected error {other}"),
    }
    assert!(err.to_string().contains("lease.ms"));
    TcpListener::bind(("127.0.0.1", port)).expect("manage port still free");
    TcpListener::bind(("127.0.0.1", dst_port)).expect("store port still free");
}

#[test]
fn unknown_and_malformed_properties_name_their_key() {
    for (text, key) in [
        ("node.id = a\ntiers.initial = DWT\ngmt.address = 127.0.0.1:1\nbogus = 1\n", "bogus"),
        ("node.id = a\ntiers.initial = DWT,XYZ\ngmt.address = 127.0.0.1:1\n", "tiers.initial"),
        ("node.id = a\ntiers.initial = GMT,DWT\nattempts.max = 0\n", "attempts.max"),
        ("node.id = a\ntiers.initial = GMT\nmanage.listen = nowhere\n", "manage.listen"),
    ] {
        let err = edurt::tiers::NodeConfiguration::parse(text).unwrap_err();
        assert_eq!(err.key(), Some(key), "{text:?} gave {err}");
    }
}

pub fn set_params_error_messages() {
    let mut p = ModuleParams::new();
    let e = p.set_params(Some(vec![Param::Int(1)]), 99).unwrap_err();
    assert_eq!(e, PipelineError::UnknownModuleType(99));
    assert_eq!(e.to_string(), "Unknown module type: 99.");
    let e = p.set_params(None, 0).unwrap_err();
    assert_eq!(e.to_string(), "Parameters vector cannot be null.");
    assert!(p.preprocessing_params().is_empty(), "failed calls leave bindings untouched");
}

pub fn preprocessing_flag_derivation() {
    assert_eq!(derive_preprocessing_flags(None), (0, 0));
    assert_eq!(derive_preprocessing_flags(Some(&[])), (0, 0));
    assert_eq!(derive_preprocessing_flags(Some(&[Param::Bool(true)])), (1, 0));
    assert_eq!(derive_preprocessing_flags(Some(&[Param::Bool(true), Param::Bool(true)])), (1, 1));
    assert_eq!(derive_preprocessing_flags(Some(&[Param::Int(1), Param::Bool(true)])), (0, 1));
}

pub fn silence_threshold_boundary() {
    let kept = remove_silence(&[0.001f64, -0.001, 0.000999, -0.000999, 0.5], DEFAULT_SILENCE_THRESHOLD);
    assert_eq!(kept, vec![0.001, -0.001, 0.5]);
}

pub fn dst_and_dwt_add_remove_round_trip() {
    let node = common::start_gmt("GMT,DST,DGT", 1000);
    for identity in [TierIdentity::DST, TierIdentity::DWT] {
        let before = node.controller_by_tier_identity(identity).map(|(_, n)| n).unwrap_or(0);
        let added = node.add_tier(identity).unwrap();
        assert_eq!(added.count, before + 1);
        let removed = node.remove_tier(identity).unwrap();
        assert_eq!(removed.count, before);
        assert_eq!(added.instance_id, removed.instance_id, "last added is removed first");
    }
    assert!(matches!(node.controller_by_tier_identity(TierIdentity::GMT), Err(TierError::NoController(_))));
    assert!(matches!(node.remove_tier(TierIdentity::DWT), Err(TierError::NothingToRemove(_))));
}

/// Harness entry points for the checks shared with the acceptance runner.
mod checks {
    #[test]
    fn invalid_property_aborts_before_binding() {
        super::invalid_property_aborts_before_binding();
    }

    #[test]
    fn set_params_error_messages() {
        super::set_params_error_messages();
    }

    #[test]
    fn preprocessing_flag_derivation() {
        super::preprocessing_flag_derivation();
    }

    #[test]
    fn silence_threshold_boundary() {
        super::silence_threshold_boundary();
    }

    #[test]
    fn dst_and_dwt_add_remove_round_trip() {
        super::dst_and_dwt_add_remove_round_trip();
    }
}
