use std::net::{SocketAddr, TcpListener};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Source, Status, ToolInvoker, ToolRequest, ToolResult, ToolSpec};
use crate::agent::policy::{json_line_call, serve_json_lines};

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum WireRequest {
    Invoke(ToolRequest),
    Specs,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum WireReply {
    Result(ToolResult),
    Specs(Vec<ToolSpec>),
}

/// Serves a gateway over newline-delimited JSON.
pub fn serve_gateway(
    listener: TcpListener,
    gateway: Arc<dyn ToolInvoker>,
    max_connections: Option<usize>,
) -> std::io::Result<()> {
    serve_json_lines(listener, max_connections, move |req: WireRequest| match req {
        WireRequest::Invoke(r) => WireReply::Result(gateway.invoke(&r)),
        WireRequest::Specs => WireReply::Specs(gateway.tool_specs()),
    })
}

/// Client for a gateway served by [`serve_gateway`]. Transport failures come
/// back as error results so rollouts keep going.
#[derive(Debug, Clone)]
pub struct RemoteGateway {
    addr: SocketAddr,
    timeout: Duration,
}

impl RemoteGateway {
    pub fn new(addr: SocketAddr) -> Self {
        RemoteGateway {
            addr,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn probe(&self) -> Result<Vec<ToolSpec>, String> {
        match json_line_call(self.addr, self.timeout, &WireRequest::Specs) {
            Ok(WireReply::Specs(s)) => Ok(s),
            Ok(WireReply::Result(_)) => Err("unexpected reply to specs request".into()),
            Err(e) => Err(e.to_string()),
        }
    }
}

impl ToolInvoker for RemoteGateway {
    fn invoke(&self, request: &ToolRequest) -> ToolResult {
        match json_line_call(self.addr, self.timeout, &WireRequest::Invoke(request.clone())) {
            Ok(WireReply::Result(r)) => r,
            other => ToolResult {
                tool_name: request.tool_name.clone(),
                status: Status::Error,
                payload: match other {
                    Err(e) => format!("gateway unreachable: {e}"),
                    _ => "unexpected gateway reply".into(),
                },
                source: Source::Primary,
                attempts: 0,
                latency_ms: 0,
            },
        }
    }

    fn tool_specs(&self) -> Vec<ToolSpec> {
        self.probe().unwrap_or_else(|e| {
            log::warn!("could not fetch tool specs from {}: {e}", self.addr);
            Vec::new()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ScriptedBackend, VirtualClock};
    use serde_json::json;

    #[test]
    fn round_trip_over_tcp() {
        let gw = Gateway::builder(Arc::new(VirtualClock::new()))
            .tool(ToolSpec {
                name: "t".into(),
                parameter_schema: json!({"type": "object"}),
                backend_chain: vec!["a".into()],
                ..ToolSpec::default()
            })
            .backend("a", Arc::new(ScriptedBackend::new([Ok("hello".into())])))
            .build()
            .unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || serve_gateway(listener, Arc::new(gw), Some(2)));
        let remote = RemoteGateway::new(addr);
        assert_eq!(remote.tool_specs()[0].name, "t");
        let r = remote.invoke(&ToolRequest::new("t", json!({})));
        assert_eq!((r.status, r.payload.as_str()), (Status::Ok, "hello"));
        server.join().unwrap().unwrap();

        let dead = RemoteGateway::new(addr).with_timeout(Duration::from_millis(200));
        assert_eq!(dead.invoke(&ToolRequest::new("t", json!({}))).status, Status::Error);
    }
}
