use thiserror::Error;

use super::status::LocalConfigStatus;

pub const DEFAULT_SERVER: &str = "http://voice.mit.edu";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EndpointError {
    #[error("dynamic server is off and no static server address is set")]
    NoEndpoint,
}

/// Picks the server a client talks to from its settings.
pub fn resolve_server_endpoint(status: &LocalConfigStatus) -> Result<String, EndpointError> {
    if status.dynamic_vns_toggle {
        return Ok(match status.dynamic_vns.as_deref().map(str::trim) {
            Some(addr) if !addr.is_empty() => addr.to_owned(),
            _ => DEFAULT_SERVER.to_owned(),
        });
    }
    let addr = status.vns_number.trim();
    if addr.is_empty() {
        return Err(EndpointError::NoEndpoint);
    }
    Ok(addr.to_owned())
}

/// Turns a server address (a URL, a host name or an IP) into a base URL.
pub fn base_url(address: &str) -> String {
    let address = address.trim().trim_end_matches('/');
    if address.contains("://") {
        address.to_owned()
    } else {
        format!("http://{address}")
    }
}
