use std::time::Duration;

use geoshapley::bridge::{bridge_connect, BridgeCommand};
use geoshapley::{
    explain_batch, BackgroundData, ExplainOptions, GeoShapError, GeoSpec, OlsModel, Predictor,
};
use ndarray::{array, Array2};

fn stub(args: &[&str]) -> BridgeCommand {
    BridgeCommand::new(env!("CARGO_BIN_EXE_geoshap-bridge-stub"), args.iter().copied())
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|i| format!("c{i}")).collect()
}

fn data() -> (Array2<f64>, BackgroundData, GeoSpec) {
    let x = Array2::from_shape_fn((12, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 3.0 - 1.5);
    let bg = BackgroundData::uniform(x.slice(ndarray::s![..5, ..]).to_owned()).unwrap();
    let spec = GeoSpec::anonymous(4, vec![2, 3]).unwrap();
    (x, bg, spec)
}

#[test]
fn bridge_explanations_match_in_process_model() {
    let coef = vec![0.5, 2.0, -1.0, 0.25, 3.0];
    let ols = OlsModel::from_coefficients(coef.clone());
    let (x, bg, spec) = data();
    let local = explain_batch(&ols, x.view(), &spec, &bg, &ExplainOptions::default()).unwrap();
    for parallel in [false, true] {
        let mut args = vec!["--function".to_string(), "linear:0.5,2,-1,0.25,3".to_string()];
        if parallel {
            args.push("--parallel".into());
        }
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let remote = bridge_connect(&stub(&args), &names(4), Duration::from_secs(20)).unwrap();
        assert_eq!(remote.parallel(), parallel);
        let opts = ExplainOptions {
            workers: 4,
            ..Default::default()
        };
        let res = explain_batch(&remote, x.view(), &spec, &bg, &opts).unwrap();
        assert!((res.base_value - local.base_value).abs() < 1e-10);
        for i in 0..x.nrows() {
            assert!((res.phi_geo[i] - local.phi_geo[i]).abs() < 1e-10);
            for j in 0..2 {
                assert!((res.phi_main[i][j] - local.phi_main[i][j]).abs() < 1e-10);
                assert!((res.phi_geo_interaction[i][j] - local.phi_geo_interaction[i][j]).abs() < 1e-10);
            }
        }
        assert!(remote.close().unwrap().success());
    }
}

#[test]
fn handshake_arity_mismatch() {
    let err = bridge_connect(&stub(&["--features", "3"]), &names(4), Duration::from_secs(10)).unwrap_err();
    assert!(matches!(err, GeoShapError::Protocol { .. }), "{err}");
    assert!(err.to_string().contains("arity"));
}

#[test]
fn launch_failure_is_a_predictor_error() {
    let cmd = BridgeCommand::new("/nonexistent/model-server", Vec::<String>::new());
    let err = bridge_connect(&cmd, &names(2), Duration::from_secs(5)).unwrap_err();
    assert!(matches!(err, GeoShapError::Predictor(_)));
}

#[test]
fn server_error_reply_carries_instance_index() {
    let (x, bg, spec) = data();
    // request 1 computes the base value; each instance then issues two (raw
    // prediction and coalition batch), so request 6 belongs to instance 2
    let remote = bridge_connect(&stub(&["--features", "4", "--fail-on", "6"]), &names(4), Duration::from_secs(10)).unwrap();
    let err = explain_batch(&remote, x.view(), &spec, &bg, &ExplainOptions::default()).unwrap_err();
    match &err {
        GeoShapError::Instance { index, .. } => assert_eq!(*index, 2),
        other => panic!("unexpected {other}"),
    }
    assert!(matches!(err.root(), GeoShapError::Predictor(m) if m.contains("injected")));
}

#[test]
fn garbage_output_is_a_protocol_error() {
    let remote = bridge_connect(&stub(&["--features", "2", "--garbage-on", "1"]), &names(2), Duration::from_secs(10)).unwrap();
    let err = remote.predict(array![[1.0, 2.0]].view()).unwrap_err();
    assert!(matches!(err, GeoShapError::Protocol { .. }), "{err}");
    // the handle stays failed
    assert!(remote.predict(array![[1.0, 2.0]].view()).is_err());
}

#[test]
fn short_reply_is_rejected() {
    let remote = bridge_connect(&stub(&["--features", "2", "--short-on", "1"]), &names(2), Duration::from_secs(10)).unwrap();
    let err = remote.predict(array![[1.0, 2.0], [3.0, 4.0]].view()).unwrap_err();
    assert!(err.to_string().contains("outputs for 2 rows"));
    assert_eq!(remote.predict(array![[1.0, 2.0]].view()).unwrap(), vec![3.0]);
}

#[test]
fn crashed_server_fails_instead_of_hanging() {
    let remote = bridge_connect(&stub(&["--features", "2", "--exit-on", "1"]), &names(2), Duration::from_secs(10)).unwrap();
    let err = remote.predict(array![[1.0, 2.0]].view()).unwrap_err();
    assert!(matches!(err, GeoShapError::Protocol { .. }), "{err}");
}

#[test]
fn slow_server_times_out() {
    let remote = bridge_connect(&stub(&["--features", "2", "--delay-ms", "2000"]), &names(2), Duration::from_millis(200)).unwrap();
    let err = remote.predict(array![[1.0, 2.0]].view()).unwrap_err();
    assert!(err.to_string().contains("timed out"));
}

#[test]
fn non_finite_inputs_are_not_sent() {
    let remote = bridge_connect(&stub(&["--features", "2"]), &names(2), Duration::from_secs(10)).unwrap();
    assert!(matches!(
        remote.predict(array![[f64::NAN, 2.0]].view()),
        Err(GeoShapError::Data(_))
    ));
    assert!(remote.predict(array![[1.0, 2.0, 3.0]].view()).is_err());
    assert_eq!(remote.predict(array![[1.0, 2.0]].view()).unwrap(), vec![3.0]);
}
