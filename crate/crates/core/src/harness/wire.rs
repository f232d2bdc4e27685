//! Loopback wire form of a replica's query stream. One TCP connection
//! carries a one-byte option length, the 40-byte tag block, then
//! length-prefixed SQL texts until the sender closes. The sender binds its
//! replica's loopback address, so the receiving side authenticates the
//! stream by source IP exactly as it does in-process.

use std::io::{self, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, SocketAddrV4, TcpListener, TcpStream};

use socket2::{Domain, Protocol, Socket, Type};

use crate::tag::{decode_option, OPTION_LEN};
use crate::verifier::QueryEnvelope;

/// Upper bound on one SQL text; anything larger is a framing error.
pub const MAX_QUERY_LEN: usize = 1 << 20;

fn invalid(what: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, what.to_string())
}

/// Accepts replica streams on an ephemeral localhost port.
pub struct WireServer {
    listener: TcpListener,
}

impl WireServer {
    pub fn bind() -> io::Result<WireServer> {
        Ok(WireServer {
            listener: TcpListener::bind((Ipv4Addr::LOCALHOST, 0))?,
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts exactly `count` connections and decodes each into envelopes
    /// stamped with `arrival`. Sequence numbers restart per connection.
    pub fn accept_streams(&self, count: usize, arrival: u64) -> io::Result<Vec<QueryEnvelope>> {
        let mut out = Vec::new();
        for _ in 0..count {
            let (stream, peer) = self.listener.accept()?;
            let source = match peer.ip() {
                IpAddr::V4(v4) => v4,
                IpAddr::V6(_) => return Err(invalid("expected an IPv4 peer")),
            };
            decode_stream(stream, source, arrival, &mut out)?;
        }
        Ok(out)
    }
}

fn decode_stream(
    mut stream: TcpStream,
    source: Ipv4Addr,
    arrival: u64,
    out: &mut Vec<QueryEnvelope>,
) -> io::Result<()> {
    let mut len_byte = [0u8; 1];
    stream.read_exact(&mut len_byte)?;
    if len_byte[0] as usize != OPTION_LEN {
        return Err(invalid("option length must be 40"));
    }
    let mut option = [0u8; OPTION_LEN];
    stream.read_exact(&mut option)?;
    let tag = decode_option(&option).map_err(|e| invalid(&e.to_string()))?;
    let mut sequence: u32 = 0;
    loop {
        let mut len = [0u8; 4];
        match stream.read_exact(&mut len) {
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            other => other?,
        }
        let len = u32::from_be_bytes(len) as usize;
        if len > MAX_QUERY_LEN {
            return Err(invalid("oversized query frame"));
        }
        let mut body = vec![0u8; len];
        stream.read_exact(&mut body)?;
        let sql_text = String::from_utf8(body).map_err(|_| invalid("query is not UTF-8"))?;
        out.push(QueryEnvelope {
            source_address: source,
            tag,
            sql_text,
            arrival,
            sequence,
        });
        sequence += 1;
    }
    Ok(())
}

/// Sends one replica's stream: connects to `to` with the source bound to
/// `from` (any 127.x.y.z works on loopback), writes the option block and
/// the queries, then closes.
pub fn send_stream(
    from: Ipv4Addr,
    to: SocketAddr,
    option: &[u8; OPTION_LEN],
    queries: &[&str],
) -> io::Result<()> {
    let socket = Socket::new(Domain::IPV4, Type::STREAM, Some(Protocol::TCP))?;
    socket.bind(&SocketAddrV4::new(from, 0).into())?;
    socket.connect(&to.into())?;
    let mut stream: TcpStream = socket.into();
    let mut frame =
        Vec::with_capacity(1 + OPTION_LEN + queries.iter().map(|q| 4 + q.len()).sum::<usize>());
    frame.push(OPTION_LEN as u8);
    frame.extend_from_slice(option);
    for q in queries {
        frame.extend_from_slice(&(q.len() as u32).to_be_bytes());
        frame.extend_from_slice(q.as_bytes());
    }
    stream.write_all(&frame)?;
    stream.flush()
}
