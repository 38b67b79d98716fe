use std::sync::Arc;

use clonekit::image::Image;
use clonekit::nn::{ArchSpec, Network};
use clonekit::rng::make_rng;
use clonekit::victim::{BlackBox, VictimEndpoint, VictimError, VictimModel};
use clonekit_service::{spawn_background, HttpVictim, RunningServer};
use rand::Rng as _;

fn toy_victim() -> Arc<VictimModel> {
    let spec = ArchSpec {
        in_channels: 3,
        stem: 4,
        widths: vec![8],
        blocks: 1,
        classes: 5,
    };
    Arc::new(VictimModel {
        network: Network::init(spec, &mut make_rng(42)),
        input_shape: [3, 8, 8],
        mean: vec![0.5; 3],
        std: vec![0.25; 3],
    })
}

fn images(n: usize, seed: u64) -> Vec<Image> {
    let mut rng = make_rng(seed);
    (0..n)
        .map(|_| Image::new(3, 8, 8, (0..192).map(|_| rng.random::<f32>()).collect()))
        .collect()
}

fn start(budget: u64) -> (RunningServer, Arc<VictimEndpoint>) {
    let ep = Arc::new(VictimEndpoint::new(toy_victim(), budget));
    let server = spawn_background(ep.clone(), "127.0.0.1:0".parse().unwrap()).unwrap();
    (server, ep)
}

#[test]
fn meta_reports_shape_and_budget() {
    let (server, _) = start(100);
    let client = HttpVictim::new(&server.url());
    let meta = client.meta().unwrap();
    assert_eq!(meta.class_count, 5);
    assert_eq!(meta.input_shape, [3, 8, 8]);
    assert_eq!(meta.remaining, 100);
}

#[test]
fn wire_answers_match_in_process() {
    let (server, _) = start(100);
    let client = HttpVictim::new(&server.url());
    let batch = images(32, 1);
    let remote = client.query(&batch).unwrap();
    let local = VictimEndpoint::new(toy_victim(), 100).query(&batch).unwrap();
    assert_eq!(remote, local);
    assert_eq!(client.remaining_budget().unwrap(), 68);
}

#[test]
fn exhaustion_is_402_and_spends_nothing() {
    let (server, ep) = start(100);
    let client = HttpVictim::new(&server.url());
    let err = client.query(&images(101, 2)).unwrap_err();
    match err {
        VictimError::BudgetExhausted(b) => {
            assert_eq!((b.requested, b.remaining, b.budget), (101, 100, 100))
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(ep.ledger().spent, 0);
}

#[test]
fn malformed_shapes_are_400() {
    let (server, ep) = start(100);
    let client = HttpVictim::new(&server.url());
    let wrong = vec![Image::filled(3, 4, 4, 0.5)];
    assert!(matches!(
        client.query(&wrong),
        Err(VictimError::ShapeMismatch { index: 0, .. })
    ));
    let resp = ureq::post(&format!("{}/v1/query", server.url()))
        .config()
        .http_status_as_error(false)
        .build()
        .send_json(serde_json::json!({"images": [[0.0, 1.0]], "shape": [3, 8, 8]}))
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let resp = ureq::post(&format!("{}/v1/query", server.url()))
        .config()
        .http_status_as_error(false)
        .build()
        .send_json(serde_json::json!({"pictures": []}))
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    assert_eq!(ep.ledger().spent, 0);
}

#[test]
fn concurrent_clients_share_one_ledger() {
    let (server, ep) = start(1000);
    let url = server.url();
    let handles: Vec<_> = (0..8)
        .map(|t| {
            let url = url.clone();
            std::thread::spawn(move || {
                let client = HttpVictim::new(&url);
                let mut ok = 0u64;
                for i in 0..10 {
                    if client.query(&images(20, t * 100 + i)).is_ok() {
                        ok += 20;
                    }
                }
                ok
            })
        })
        .collect();
    let served: u64 = handles.into_iter().map(|h| h.join().unwrap()).sum();
    // 1600 units requested against a budget of 1000.
    assert_eq!(served, 1000);
    assert_eq!(ep.ledger().spent, 1000);
}
