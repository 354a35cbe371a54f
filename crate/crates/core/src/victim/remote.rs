//! Wire protocol for attacking externally served models, plus the server
//! half so any in-process victim can be exposed over HTTP.
//!
//! `POST /predict` takes `{table, column_index, classes}` (the table in
//! corpus record format) and answers `{classes, logits}` with the classes
//! echoed in request order. `POST /classes` answers the victim's class
//! vocabulary and decision threshold. All payloads are UTF-8 JSON.
//!
//! Transport failures (timeouts, refused connections, non-success statuses,
//! malformed bodies) surface as errors and are never retried, so a flaky
//! endpoint can never silently change an attack outcome.

use std::net::SocketAddr;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{LogitVector, Victim, VictimError};
use crate::table::{table_from_json, table_to_json, Table};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    /// Corpus-format table record.
    pub table: serde_json::Value,
    pub column_index: usize,
    pub classes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictResponse {
    pub classes: Vec<String>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassesResponse {
    pub classes: Vec<String>,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct ErrorResponse {
    error: String,
}

/// Client for a victim served behind the wire protocol. The vocabulary and
/// threshold are fetched once at connect time; afterwards the client is
/// immutable and safe to query concurrently.
#[derive(Debug)]
pub struct RemoteVictim {
    endpoint: String,
    client: reqwest::blocking::Client,
    vocab: Vec<String>,
    threshold: f64,
}

impl RemoteVictim {
    pub fn connect(endpoint: &str) -> Result<Self, VictimError> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .connect_timeout(Duration::from_secs(10))
            .build()
            .map_err(|e| VictimError::Transport {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })?;
        let response = client
            .post(format!("{endpoint}/classes"))
            .send()
            .map_err(|e| VictimError::Transport {
                endpoint: endpoint.clone(),
                message: e.to_string(),
            })?;
        if !response.status().is_success() {
            return Err(VictimError::Transport {
                endpoint: endpoint.clone(),
                message: format!("/classes answered status {}", response.status()),
            });
        }
        let body: ClassesResponse = response.json().map_err(|e| VictimError::Protocol {
            endpoint: endpoint.clone(),
            message: format!("bad /classes body: {e}"),
        })?;
        if body.classes.is_empty() {
            return Err(VictimError::Protocol {
                endpoint: endpoint.clone(),
                message: "endpoint reports an empty class vocabulary".into(),
            });
        }
        Ok(RemoteVictim {
            endpoint,
            client,
            vocab: body.classes,
            threshold: body.threshold,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Victim for RemoteVictim {
    fn classes(&self) -> &[String] {
        &self.vocab
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }

    fn predict_logits(
        &self,
        table: &Table,
        col: usize,
        classes: &[String],
    ) -> Result<LogitVector, VictimError> {
        if classes.is_empty() {
            return Err(VictimError::EmptyClassList);
        }
        let request = PredictRequest {
            table: table_to_json(table),
            column_index: col,
            classes: classes.to_vec(),
        };
        let response = self
            .client
            .post(format!("{}/predict", self.endpoint))
            .json(&request)
            .send()
            .map_err(|e| VictimError::Transport {
                endpoint: self.endpoint.clone(),
                message: e.to_string(),
            })?;
        let status = response.status();
        if !status.is_success() {
            let detail = response
                .json::<ErrorResponse>()
                .map(|e| e.error)
                .unwrap_or_else(|_| "no error detail".into());
            return Err(VictimError::Transport {
                endpoint: self.endpoint.clone(),
                message: format!("/predict answered status {status}: {detail}"),
            });
        }
        let body: PredictResponse = response.json().map_err(|e| VictimError::Protocol {
            endpoint: self.endpoint.clone(),
            message: format!("bad /predict body: {e}"),
        })?;
        if body.classes != classes {
            return Err(VictimError::Protocol {
                endpoint: self.endpoint.clone(),
                message: "response classes differ from request order".into(),
            });
        }
        if body.logits.len() != classes.len() {
            return Err(VictimError::Protocol {
                endpoint: self.endpoint.clone(),
                message: format!(
                    "wrong-length score array: {} logits for {} classes",
                    body.logits.len(),
                    classes.len()
                ),
            });
        }
        if body.logits.iter().any(|s| !s.is_finite()) {
            return Err(VictimError::Protocol {
                endpoint: self.endpoint.clone(),
                message: "non-finite logit in response".into(),
            });
        }
        Ok(LogitVector::new(body.classes, body.logits))
    }
}

type SharedVictim = Arc<dyn Victim>;

fn bad_request(message: String) -> (StatusCode, Json<ErrorResponse>) {
    (StatusCode::BAD_REQUEST, Json(ErrorResponse { error: message }))
}

async fn predict_handler(
    State(victim): State<SharedVictim>,
    Json(request): Json<PredictRequest>,
) -> Result<Json<PredictResponse>, (StatusCode, Json<ErrorResponse>)> {
    let table = table_from_json(request.table).map_err(|e| bad_request(e.to_string()))?;
    let logits = victim
        .predict_logits(&table, request.column_index, &request.classes)
        .map_err(|e| bad_request(e.to_string()))?;
    Ok(Json(PredictResponse {
        classes: logits.classes,
        logits: logits.scores,
    }))
}

async fn classes_handler(State(victim): State<SharedVictim>) -> Json<ClassesResponse> {
    Json(ClassesResponse {
        classes: victim.classes().to_vec(),
        threshold: victim.threshold(),
    })
}

/// A running server. Dropping the handle shuts the server down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    /// Blocks until the server exits (which only happens at shutdown).
    pub fn join(mut self) {
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

pub(crate) fn spawn_router(router: Router, addr: SocketAddr) -> Result<ServerHandle, VictimError> {
    let (tx_ready, rx_ready) = mpsc::channel::<Result<SocketAddr, String>>();
    let (tx_shutdown, rx_shutdown) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let runtime = match tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(e) => {
                let _ = tx_ready.send(Err(e.to_string()));
                return;
            }
        };
        runtime.block_on(async move {
            let listener = match tokio::net::TcpListener::bind(addr).await {
                Ok(l) => l,
                Err(e) => {
                    let _ = tx_ready.send(Err(e.to_string()));
                    return;
                }
            };
            let local = listener.local_addr().expect("bound listener has an address");
            let _ = tx_ready.send(Ok(local));
            let _ = axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx_shutdown.await;
                })
                .await;
        });
    });
    match rx_ready.recv() {
        Ok(Ok(local)) => Ok(ServerHandle {
            addr: local,
            shutdown: Some(tx_shutdown),
            thread: Some(thread),
        }),
        Ok(Err(message)) => Err(VictimError::Transport {
            endpoint: addr.to_string(),
            message,
        }),
        Err(_) => Err(VictimError::Transport {
            endpoint: addr.to_string(),
            message: "server thread exited before binding".into(),
        }),
    }
}

/// Exposes a victim over the wire protocol on `addr` (port 0 picks a free
/// port; the bound address is on the returned handle).
pub fn serve_victim(victim: SharedVictim, addr: SocketAddr) -> Result<ServerHandle, VictimError> {
    let router = Router::new()
        .route("/predict", post(predict_handler))
        .route("/classes", post(classes_handler))
        .with_state(victim);
    spawn_router(router, addr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::EmbeddingStore;
    use crate::table::{Corpus, SplitTag, Table};
    use crate::victim::{build_prototype_victim, MissingEmbeddingPolicy, PrototypeVictim};
    use std::collections::BTreeMap;

    fn fixture_victim() -> PrototypeVictim {
        let mut store = EmbeddingStore::new(3);
        store.insert("a", vec![1.0, 0.1, 0.0]).unwrap();
        store.insert("b", vec![0.0, 1.0, 0.2]).unwrap();
        store.insert("hdr", vec![0.5, 0.5, 0.0]).unwrap();
        let table = Table::new(
            "tr",
            vec!["hdr".into(), "hdr2".into()],
            vec![
                vec!["a".into(), "b".into()],
                vec!["a".into(), "b".into()],
            ],
            BTreeMap::from([(0, vec!["c1".into()]), (1, vec!["c2".into()])]),
        )
        .unwrap();
        let corpus = Corpus::new(vec![table], SplitTag::Train).unwrap();
        build_prototype_victim(&corpus, &store, 0.3, 0.5, MissingEmbeddingPolicy::Skip).unwrap()
    }

    fn query_table() -> Table {
        Table::new(
            "q",
            vec!["hdr".into()],
            vec![vec!["a".into()], vec!["b".into()]],
            BTreeMap::from([(0, vec!["c1".into()])]),
        )
        .unwrap()
    }

    #[test]
    fn remote_logits_match_in_process_bit_for_bit() {
        let victim = fixture_victim();
        let handle =
            serve_victim(Arc::new(victim.clone()), "127.0.0.1:0".parse().unwrap()).unwrap();
        let remote = RemoteVictim::connect(&handle.url()).unwrap();

        let table = query_table();
        let classes = vec!["c1".to_string(), "c2".to_string()];
        let local = victim.predict_logits(&table, 0, &classes).unwrap();
        let wire = remote.predict_logits(&table, 0, &classes).unwrap();
        assert_eq!(local, wire);

        let local_set = victim.predict_classes(&table, 0).unwrap();
        let wire_set = remote.predict_classes(&table, 0).unwrap();
        assert_eq!(local_set, wire_set);
        assert_eq!(remote.classes(), victim.classes());
        assert_eq!(remote.threshold(), victim.threshold());
        handle.shutdown();
    }

    #[test]
    fn server_rejects_bad_requests() {
        let victim = fixture_victim();
        let handle =
            serve_victim(Arc::new(victim), "127.0.0.1:0".parse().unwrap()).unwrap();
        let remote = RemoteVictim::connect(&handle.url()).unwrap();
        let table = query_table();
        let err = remote
            .predict_logits(&table, 0, &["never_heard_of_it".to_string()])
            .unwrap_err();
        assert!(matches!(err, VictimError::Transport { .. }), "{err}");
        handle.shutdown();
    }

    #[test]
    fn wrong_length_scores_are_a_protocol_error() {
        async fn bogus_predict(
            Json(request): Json<PredictRequest>,
        ) -> Json<PredictResponse> {
            let mut logits = vec![0.0; request.classes.len()];
            logits.push(0.5); // one extra
            Json(PredictResponse {
                classes: request.classes,
                logits,
            })
        }
        async fn bogus_classes() -> Json<ClassesResponse> {
            Json(ClassesResponse {
                classes: vec!["c1".into()],
                threshold: 0.5,
            })
        }
        let router = Router::new()
            .route("/predict", post(bogus_predict))
            .route("/classes", post(bogus_classes));
        let handle = spawn_router(router, "127.0.0.1:0".parse().unwrap()).unwrap();
        let remote = RemoteVictim::connect(&handle.url()).unwrap();
        let err = remote
            .predict_logits(&query_table(), 0, &["c1".to_string()])
            .unwrap_err();
        assert!(matches!(err, VictimError::Protocol { .. }), "{err}");
        handle.shutdown();
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error_naming_it() {
        let err = RemoteVictim::connect("http://127.0.0.1:9").unwrap_err();
        match err {
            VictimError::Transport { endpoint, .. } => {
                assert!(endpoint.contains("127.0.0.1:9"));
            }
            other => panic!("expected transport error, got {other}"),
        }
    }
}
