// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared helpers for the integration tests.

#![allow(dead_code)]

pub mod synthetic;
pub mod toy_oracle;

use std::thread::JoinHandle;

use aspectprobe_core::backend::{wire, ToyMlm};

/// A wire-protocol server on an ephemeral port, serving a toy model.
pub struct ToyServer {
    pub url: String,
    server: std::sync::Arc<tiny_http::Server>,
    thread: Option<JoinHandle<()>>,
}

impl ToyServer {
    pub fn start(model: ToyMlm) -> Self {
        let server = std::sync::Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip listener"));
        let srv = server.clone();
        let thread = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let (status, reply) = wire::handle(req.url(), &body, &model);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").unwrap();
                let resp = tiny_http::Response::from_string(reply)
                    .with_status_code(status)
                    .with_header(header);
                let _ = req.respond(resp);
            }
        });
        ToyServer {
            url,
            server,
            thread: Some(thread),
        }
    }
}

impl Drop for ToyServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
