//! Standard DNS message encoding, backed by `hickory-proto`.

use std::net::{Ipv4Addr, Ipv6Addr};

use hickory_proto::op::{Message, MessageType, OpCode, Query, ResponseCode};
use hickory_proto::rr::rdata::{A, AAAA, CNAME, PTR};
use hickory_proto::rr::{Name, RData, Record, RecordType};
use thiserror::Error;

use super::{DnsQuery, RecordKind};

/// Classic DNS-over-UDP payload limit without EDNS.
pub const UDP_PAYLOAD_LIMIT: usize = 512;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("invalid query name {0:?}")]
    BadName(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("response id {got} does not match query id {want}")]
    IdMismatch { got: u16, want: u16 },
    #[error("message is not a response")]
    NotResponse,
}

pub fn record_type(kind: RecordKind) -> RecordType {
    match kind {
        RecordKind::Ptr => RecordType::PTR,
        RecordKind::A => RecordType::A,
        RecordKind::Aaaa => RecordType::AAAA,
    }
}

pub fn to_name(text: &str) -> Result<Name, WireError> {
    let trimmed = text.trim_end_matches('.');
    if trimmed.is_empty() {
        return Ok(Name::root());
    }
    let mut name = Name::from_ascii(trimmed).map_err(|_| WireError::BadName(text.to_string()))?;
    name.set_fqdn(true);
    Ok(name)
}

/// Presentation form without the trailing dot; the root name is `""`.
pub fn from_name(name: &Name) -> String {
    let text = name.to_ascii();
    match text.strip_suffix('.') {
        Some(s) => s.to_string(),
        None => text,
    }
}

pub fn encode_query(id: u16, query: &DnsQuery) -> Result<Vec<u8>, WireError> {
    let mut msg = Message::new(id, MessageType::Query, OpCode::Query);
    msg.metadata.recursion_desired = true;
    msg.add_query(Query::query(to_name(&query.name)?, record_type(query.kind)));
    msg.to_vec().map_err(|e| WireError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedResponse {
    pub id: u16,
    pub rcode: u16,
    pub truncated: bool,
    /// Terminal answers of the queried type, in presentation form.
    pub answers: Vec<String>,
    pub cname_chain: bool,
}

pub fn decode_response(bytes: &[u8], want_id: u16, kind: RecordKind) -> Result<DecodedResponse, WireError> {
    let msg = Message::from_vec(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    if msg.metadata.message_type != MessageType::Response {
        return Err(WireError::NotResponse);
    }
    if msg.metadata.id != want_id {
        return Err(WireError::IdMismatch {
            got: msg.metadata.id,
            want: want_id,
        });
    }
    let wanted = record_type(kind);
    let mut answers = Vec::new();
    let mut cname_chain = false;
    for rec in &msg.answers {
        match &rec.data {
            RData::CNAME(_) => cname_chain = true,
            RData::PTR(PTR(n)) if wanted == RecordType::PTR => answers.push(from_name(n)),
            RData::A(A(a)) if wanted == RecordType::A => answers.push(a.to_string()),
            RData::AAAA(AAAA(a)) if wanted == RecordType::AAAA => answers.push(a.to_string()),
            _ => {}
        }
    }
    Ok(DecodedResponse {
        id: msg.metadata.id,
        rcode: u16::from(msg.metadata.response_code),
        truncated: msg.metadata.truncation,
        answers,
        cname_chain,
    })
}

/// A parsed incoming query, as seen by a server.
#[derive(Debug, Clone)]
pub struct IncomingQuery {
    pub id: u16,
    pub name: String,
    pub kind: Option<RecordKind>,
    message: Message,
}

pub fn decode_query(bytes: &[u8]) -> Result<IncomingQuery, WireError> {
    let msg = Message::from_vec(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    let q = msg
        .queries
        .first()
        .ok_or_else(|| WireError::Malformed("no question".into()))?;
    let kind = match q.query_type() {
        RecordType::PTR => Some(RecordKind::Ptr),
        RecordType::A => Some(RecordKind::A),
        RecordType::AAAA => Some(RecordKind::Aaaa),
        _ => None,
    };
    Ok(IncomingQuery {
        id: msg.metadata.id,
        name: from_name(q.name()),
        kind,
        message: msg,
    })
}

/// Answer data a server can place in a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerData {
    Ptr(String),
    A(Ipv4Addr),
    Aaaa(Ipv6Addr),
    Cname(String),
}

/// Builds a response to `query`; `answers` pairs owner names with data.
pub fn encode_response(
    query: &IncomingQuery,
    rcode: u16,
    answers: &[(String, AnswerData)],
    truncate: bool,
) -> Result<Vec<u8>, WireError> {
    let mut msg = Message::response(query.id, OpCode::Query);
    msg.metadata.recursion_desired = query.message.metadata.recursion_desired;
    msg.metadata.recursion_available = true;
    msg.metadata.response_code = <ResponseCode as From<u16>>::from(rcode);
    msg.add_queries(query.message.queries.iter().cloned());
    if truncate {
        msg.metadata.truncation = true;
    } else {
        for (owner, data) in answers {
            let owner = to_name(owner)?;
            let rdata = match data {
                AnswerData::Ptr(n) => RData::PTR(PTR(to_name(n)?)),
                AnswerData::A(a) => RData::A(A(*a)),
                AnswerData::Aaaa(a) => RData::AAAA(AAAA(*a)),
                AnswerData::Cname(n) => RData::CNAME(CNAME(to_name(n)?)),
            };
            msg.add_answer(Record::from_rdata(owner, 300, rdata));
        }
    }
    msg.to_vec().map_err(|e| WireError::Malformed(e.to_string()))
}
