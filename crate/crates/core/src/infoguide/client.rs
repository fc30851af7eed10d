//! External generator protocol: one JSON request line out, one JSON
//! response line back.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::InfoGuideError;

pub const SUMMARY_TEMPLATE: &str = "summarize_chunks";
pub const ANSWER_TEMPLATE: &str = "answer_with_context";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub template_id: String,
    pub query: String,
    pub contexts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

pub trait GeneratorClient: Send + Sync {
    fn generate(&self, request: &GenerateRequest) -> Result<String, InfoGuideError>;
}

/// Line-delimited JSON over TCP, one connection per request.
#[derive(Clone, Debug)]
pub struct TcpGeneratorClient {
    addr: SocketAddr,
    timeout: Duration,
}

impl TcpGeneratorClient {
    pub fn new(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, InfoGuideError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| InfoGuideError::Client("address resolves to nothing".into()))?;
        Ok(Self { addr, timeout })
    }
}

impl GeneratorClient for TcpGeneratorClient {
    fn generate(&self, request: &GenerateRequest) -> Result<String, InfoGuideError> {
        let mut stream = TcpStream::connect_timeout(&self.addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        let mut line = serde_json::to_string(request).map_err(|e| InfoGuideError::Client(e.to_string()))?;
        line.push('\n');
        stream.write_all(line.as_bytes())?;
        let mut reply = String::new();
        BufReader::new(stream).read_line(&mut reply)?;
        let resp: GenerateResponse =
            serde_json::from_str(reply.trim_end()).map_err(|e| InfoGuideError::Client(format!("bad response: {e}")))?;
        Ok(resp.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::TcpListener;
    use std::thread;

    #[test]
    fn wire_field_names() {
        let req = GenerateRequest {
            template_id: "t".into(),
            query: "q".into(),
            contexts: vec!["c".into()],
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"template_id":"t","query":"q","contexts":["c"]}"#
        );
    }

    #[test]
    fn round_trip_over_tcp() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut r = BufReader::new(s.try_clone().unwrap());
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            let req: GenerateRequest = serde_json::from_str(&line).unwrap();
            let mut s = s;
            writeln!(s, "{}", serde_json::json!({"text": format!("echo {}", req.query)})).unwrap();
        });
        let c = TcpGeneratorClient::new(addr, Duration::from_secs(2)).unwrap();
        let req = GenerateRequest {
            template_id: ANSWER_TEMPLATE.into(),
            query: "hi".into(),
            contexts: vec![],
        };
        assert_eq!(c.generate(&req).unwrap(), "echo hi");
        server.join().unwrap();
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let c = TcpGeneratorClient::new(addr, Duration::from_millis(100)).unwrap();
        let req = GenerateRequest {
            template_id: ANSWER_TEMPLATE.into(),
            query: "hi".into(),
            contexts: vec![],
        };
        assert!(c.generate(&req).is_err());
        drop(listener);
    }
}
