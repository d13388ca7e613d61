#![allow(dead_code)]

use std::any::Any;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::Router;

use promptscope::api::Service;
use promptscope::embed_server::embed_router;
use promptscope::server::{router, AppState};
use promptscope_core::embedding::EmbeddingVector;
use promptscope_core::eval::LabelMap;
use promptscope_core::provider::{EmbeddingProvider, HttpProvider, StubProvider, DEFAULT_TIMEOUT};
use promptscope_core::store::{ImageRecord, Store};

/// An axum app running on its own runtime thread; stopped on drop.
pub struct Running {
    pub url: String,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
    // Dropped only after the runtime is gone.
    _keep: Vec<Box<dyn Any + Send>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn spawn(app: Router, keep: Vec<Box<dyn Any + Send>>) -> Running {
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            addr_tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                })
                .await
                .unwrap();
        });
    });
    let addr = addr_rx.recv().unwrap();
    Running {
        url: format!("http://{addr}"),
        shutdown: Some(stop_tx),
        thread: Some(thread),
        _keep: keep,
    }
}

pub fn spawn_embedder(stub: StubProvider) -> Running {
    spawn(embed_router(Arc::new(stub)), Vec::new())
}

/// Serves `store` with an HTTP provider pointed at `endpoint`.
pub fn spawn_service(store: Store, endpoint: &str, store_path: Option<&Path>) -> Running {
    let provider: Arc<dyn EmbeddingProvider> = Arc::new(HttpProvider::connect(endpoint, DEFAULT_TIMEOUT).unwrap());
    let service = Service {
        provider: Some(provider),
        store_path: store_path.map(|p| p.display().to_string()),
        ..Default::default()
    };
    let state = Arc::new(AppState::new(service, store, None));
    spawn(router(Arc::clone(&state)), vec![Box::new(state)])
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptscope"))
        .args(args)
        .env_remove("PROMPTSCOPE_EMBED_ENDPOINT")
        .output()
        .expect("run promptscope")
}

pub fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

// Hand-built 25-image, 5-class fixture with a known confusion matrix.

pub const DIM: usize = 8;
pub const CLASSES: [&str; 5] = ["clear", "fog", "night", "rain", "snow"];

/// (truth, predicted) for each image, five per class.
pub const MICRO: [(usize, usize); 25] = [
    (0, 0), (0, 0), (0, 0), (0, 2), (0, 2),
    (1, 1), (1, 1), (1, 1), (1, 1), (1, 1),
    (2, 2), (2, 2), (2, 2), (2, 2), (2, 0),
    (3, 3), (3, 3), (3, 3), (3, 3), (3, 4),
    (4, 4), (4, 4), (4, 4), (4, 3), (4, 1),
];

/// `raw[pred][truth]` for [`MICRO`], counted by hand.
pub const MICRO_CONFUSION: [[u64; 5]; 5] = [
    [3, 0, 1, 0, 0],
    [0, 5, 0, 0, 1],
    [2, 0, 4, 0, 0],
    [0, 0, 0, 4, 1],
    [0, 0, 0, 1, 3],
];

/// Per-class F1 by hand: 2/3, 10/11, 8/11, 4/5, 2/3; their mean.
pub const MICRO_MACRO_F1: f64 = 622.0 / 825.0;

pub fn basis(i: usize) -> Vec<f32> {
    let mut v = vec![0.0; DIM];
    v[i] = 1.0;
    v
}

pub fn micro_records() -> Vec<ImageRecord> {
    MICRO
        .iter()
        .enumerate()
        .map(|(j, &(truth, pred))| {
            let mut v = vec![0.0f32; DIM];
            if truth == pred {
                v[truth] = 1.0;
                v[(truth + 1) % 5] = 0.2;
            } else {
                v[pred] = 0.9;
                v[truth] = 0.3;
            }
            v[5 + j % 3] = 0.1 * (1 + j % 4) as f32;
            ImageRecord::new(
                format!("img-{j:02}"),
                format!("frames/{}/{j:02}.png", CLASSES[truth]),
                EmbeddingVector::new(v).unwrap(),
            )
            .with_tag("condition", CLASSES[truth])
        })
        .collect()
}

pub fn micro_truth() -> LabelMap {
    MICRO
        .iter()
        .enumerate()
        .map(|(j, &(truth, _))| (format!("img-{j:02}"), CLASSES[truth].to_owned()))
        .collect()
}

/// Class prompt texts mapped onto the first five basis vectors.
pub fn micro_stub() -> StubProvider {
    let mut stub = StubProvider::new(DIM).unwrap();
    for (i, c) in CLASSES.iter().enumerate() {
        stub = stub.with_text(*c, EmbeddingVector::new(basis(i)).unwrap()).unwrap();
    }
    stub
}

pub fn micro_store() -> Store {
    let mut store = Store::create(DIM).unwrap();
    store.ingest(micro_records()).unwrap();
    store
}

pub struct MicroFiles {
    pub dir: tempfile::TempDir,
    pub store: PathBuf,
    pub classes: PathBuf,
    pub truth: PathBuf,
}

pub fn micro_files() -> MicroFiles {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("micro.psvs");
    micro_store().save(&store).unwrap();
    let classes = dir.path().join("classes.tsv");
    let tsv: String = CLASSES.iter().map(|c| format!("{c}\t{c}\n")).collect();
    std::fs::write(&classes, tsv).unwrap();
    let truth = dir.path().join("truth.tsv");
    std::fs::write(&truth, promptscope_core::eval::format_label_tsv(&micro_truth())).unwrap();
    MicroFiles {
        dir,
        store,
        classes,
        truth,
    }
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
