//! A gateway served over real HTTP on an ephemeral port.

#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use oais_core::{Archive, Gateway, GatewayConfig};
use oais_gateway::http::UreqTransport;
use tokio::sync::oneshot;

pub struct TestServer {
    pub addr: SocketAddr,
    pub gateway: Arc<Gateway>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(archive: impl Into<Arc<Archive>>, tweak: impl FnOnce(&mut GatewayConfig)) -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()
            .unwrap();
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .unwrap();
        let addr = listener.local_addr().unwrap();
        let mut config = GatewayConfig {
            listen: addr,
            ..GatewayConfig::default()
        };
        tweak(&mut config);
        let gateway = Arc::new(Gateway::new(config, archive.into()).unwrap());
        let (tx, rx) = oneshot::channel();
        let served = Arc::clone(&gateway);
        let thread = std::thread::spawn(move || {
            runtime
                .block_on(oais_gateway::server::serve(served, listener, async {
                    let _ = rx.await;
                }))
                .unwrap();
        });
        Self {
            addr,
            gateway,
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn oai_url(&self) -> String {
        self.gateway.config().oaipmh_url()
    }

    pub fn openurl_url(&self) -> String {
        self.gateway.config().openurl_url()
    }

    pub fn transport(&self) -> Arc<UreqTransport> {
        Arc::new(UreqTransport::default())
    }

    /// Stops accepting, drains in-flight requests and joins the server.
    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(thread) = self.thread.take() {
            thread.join().unwrap();
        }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}
