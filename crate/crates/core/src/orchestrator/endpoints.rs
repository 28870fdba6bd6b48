use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use super::OrchestratorError;

pub const ENV_POLICY: &str = "DESKRESEARCH_POLICY";
pub const ENV_TOOLS: &str = "DESKRESEARCH_TOOLS";

/// Where an endpoint lives: `tcp://host:port`, `builtin:<name>` for an
/// in-process policy, or `sim:<corpus.jsonl>` for in-process simulated tools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Locator {
    Tcp(SocketAddr),
    Builtin(String),
    Sim(PathBuf),
}

impl FromStr for Locator {
    type Err = OrchestratorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| OrchestratorError::BadLocator(s.to_string(), why.to_string());
        if let Some(addr) = s.strip_prefix("tcp://") {
            let resolved = addr
                .to_socket_addrs()
                .map_err(|e| bad(&e.to_string()))?
                .next()
                .ok_or_else(|| bad("address did not resolve"))?;
            return Ok(Locator::Tcp(resolved));
        }
        if let Some(name) = s.strip_prefix("builtin:").filter(|n| !n.is_empty()) {
            return Ok(Locator::Builtin(name.to_string()));
        }
        if let Some(path) = s.strip_prefix("sim:").filter(|p| !p.is_empty()) {
            return Ok(Locator::Sim(PathBuf::from(path)));
        }
        Err(bad("expected tcp://host:port, builtin:<name> or sim:<path>"))
    }
}

impl std::fmt::Display for Locator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Locator::Tcp(a) => write!(f, "tcp://{a}"),
            Locator::Builtin(n) => write!(f, "builtin:{n}"),
            Locator::Sim(p) => write!(f, "sim:{}", p.display()),
        }
    }
}

impl Locator {
    /// Startup reachability check: a TCP connect, or the corpus file existing.
    pub fn probe(&self, timeout: Duration) -> Result<(), OrchestratorError> {
        match self {
            Locator::Tcp(addr) => TcpStream::connect_timeout(addr, timeout)
                .map(|_| ())
                .map_err(|e| OrchestratorError::Unreachable(self.to_string(), e.to_string())),
            Locator::Builtin(_) => Ok(()),
            Locator::Sim(path) if path.is_file() => Ok(()),
            Locator::Sim(path) => Err(OrchestratorError::Unreachable(
                self.to_string(),
                format!("{} is not a file", path.display()),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_probe() {
        let l: Locator = "tcp://127.0.0.1:9".parse().unwrap();
        assert_eq!(l.to_string(), "tcp://127.0.0.1:9");
        assert_eq!("builtin:oracle".parse::<Locator>().unwrap(), Locator::Builtin("oracle".into()));
        assert!("http://x".parse::<Locator>().is_err());
        assert!("builtin:".parse::<Locator>().is_err());

        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let live = Locator::Tcp(listener.local_addr().unwrap());
        assert!(live.probe(Duration::from_secs(1)).is_ok());
        drop(listener);
        assert!(Locator::Sim("/nonexistent/corpus.jsonl".into()).probe(Duration::from_secs(1)).is_err());
    }
}
