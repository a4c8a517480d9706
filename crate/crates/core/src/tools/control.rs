use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::screen::BindingHandler;

/// One line sent to an app's control socket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlRequest {
    pub command: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

/// The app's one-line answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlReply {
    pub ok: bool,
    #[serde(default)]
    pub output: String,
    #[serde(default)]
    pub error: String,
}

/// Forwards widget bindings to an app's line-oriented TCP control socket.
#[derive(Debug, Clone)]
pub struct ControlClient {
    endpoint: String,
    timeout: Duration,
}

impl ControlClient {
    /// `endpoint` uses the probe endpoint syntax, `tcp:HOST:PORT`.
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(5),
        }
    }

    pub fn send(&self, req: &ControlRequest) -> Result<ControlReply, String> {
        let addr = self
            .endpoint
            .strip_prefix("tcp:")
            .ok_or_else(|| format!("unsupported control endpoint `{}`", self.endpoint))?;
        let sock = addr
            .to_socket_addrs()
            .map_err(|e| e.to_string())?
            .next()
            .ok_or_else(|| format!("cannot resolve `{addr}`"))?;
        let mut stream = TcpStream::connect_timeout(&sock, self.timeout).map_err(|e| e.to_string())?;
        stream.set_read_timeout(Some(self.timeout)).map_err(|e| e.to_string())?;
        let mut line = serde_json::to_string(req).map_err(|e| e.to_string())?;
        line.push('\n');
        stream.write_all(line.as_bytes()).map_err(|e| e.to_string())?;
        let mut reply = String::new();
        BufReader::new(stream).read_line(&mut reply).map_err(|e| e.to_string())?;
        serde_json::from_str(reply.trim_end()).map_err(|e| format!("bad control reply: {e}"))
    }
}

impl BindingHandler for ControlClient {
    fn invoke(&mut self, command: &str, args: &Map<String, Value>) -> Result<String, String> {
        let reply = self.send(&ControlRequest {
            command: command.to_owned(),
            args: args.clone(),
        })?;
        if reply.ok {
            Ok(reply.output)
        } else {
            Err(reply.error)
        }
    }
}
