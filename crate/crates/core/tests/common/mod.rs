#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use slotproj::{AnnotatedUtterance, BioLabel, Dataset, SlotSpan};

const WORDS: &[&str] = &[
    "show", "me", "flights", "from", "to", "on", "the", "cheapest", "fare", "morning", "list", "what", "is", "are",
    "airport", "código", "straße", "北京", "x", "n't",
];
const SLOT_TYPES: &[&str] = &["fromloc.city_name", "toloc.city_name", "depart_date.day_name", "airline_name", "time", "city"];
const INTENTS: &[&str] = &["atis_flight", "atis_airfare", "atis_ground_service"];

/// A random well-formed utterance with 1..=20 tokens and 0..=5 spans.
pub fn random_utterance<R: Rng>(rng: &mut R, id: &str, locale: &str) -> AnnotatedUtterance {
    let n = rng.random_range(1..=20);
    let tokens: Vec<String> = (0..n).map(|_| WORDS.choose(rng).unwrap().to_string()).collect();
    let spans = random_spans(rng, n, 5);
    let intent = INTENTS.choose(rng).unwrap();
    AnnotatedUtterance::from_spans(id, tokens, &spans, *intent, locale).unwrap()
}

/// Up to `max` disjoint sorted spans over `n` tokens.
pub fn random_spans<R: Rng>(rng: &mut R, n: usize, max: usize) -> Vec<SlotSpan> {
    let want = rng.random_range(0..=max.min(n));
    let mut starts: Vec<usize> = rand::seq::index::sample(rng, n, want).into_vec();
    starts.sort_unstable();
    let mut spans = Vec::new();
    for (k, &start) in starts.iter().enumerate() {
        let limit = starts.get(k + 1).copied().unwrap_or(n);
        let end = rng.random_range(start + 1..=limit);
        spans.push(SlotSpan::new(*SLOT_TYPES.choose(rng).unwrap(), start, end));
    }
    spans
}

pub fn labels(s: &str) -> Vec<BioLabel> {
    BioLabel::parse_sequence(s).unwrap()
}

pub fn utt(id: &str, tokens: &str, labels_str: &str, intent: &str) -> AnnotatedUtterance {
    AnnotatedUtterance::new(
        id,
        tokens.split(' ').map(String::from).collect(),
        labels(labels_str),
        intent,
        "en",
    )
    .unwrap()
}

/// 100 ATIS-like examples, each with at least one slot.
pub fn fixture_100() -> Dataset {
    let cities = ["boston", "denver", "atlanta", "pittsburgh", "dallas", "baltimore", "oakland"];
    let days = ["monday", "tuesday", "friday", "sunday"];
    let examples = (0..100)
        .map(|i| {
            let from = cities[i % cities.len()];
            let to = cities[(i * 3 + 1) % cities.len()];
            let day = days[i % days.len()];
            match i % 4 {
                0 => utt(
                    &i.to_string(),
                    &format!("show me flights from {from} to {to}"),
                    "O O O O B-fromloc.city_name O B-toloc.city_name",
                    "atis_flight",
                ),
                1 => utt(
                    &i.to_string(),
                    &format!("what is the cheapest fare to {to} on {day}"),
                    "O O O B-cost_relative O O B-toloc.city_name O B-depart_date.day_name",
                    "atis_airfare",
                ),
                2 => utt(
                    &i.to_string(),
                    &format!("ground transportation in {from}"),
                    "O O O B-city_name",
                    "atis_ground_service",
                ),
                _ => utt(
                    &i.to_string(),
                    &format!("flights from {from} to new york city {day} morning"),
                    "O O B-fromloc.city_name O B-toloc.city_name I-toloc.city_name I-toloc.city_name B-depart_date.day_name B-depart_time.period_of_day",
                    "atis_flight",
                ),
            }
        })
        .collect();
    Dataset::new("en", examples).unwrap()
}

#[derive(Clone)]
pub struct StubResponse {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub delay: Duration,
}

impl StubResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        StubResponse {
            status: 200,
            headers: vec![],
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16, body: impl Into<String>) -> Self {
        StubResponse {
            status,
            ..Self::ok(body)
        }
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.headers.push((name.into(), value.into()));
        self
    }

    pub fn delayed(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub headers: Vec<(String, String)>,
    pub body: String,
}

type Responder = dyn Fn(usize, &RecordedRequest) -> StubResponse + Send + Sync;

/// A minimal HTTP/1.1 server answering every request with `respond(n, req)`
/// where `n` counts requests from 0.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<RecordedRequest>>>,
    pub max_in_flight: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start<F>(respond: F) -> Self
    where
        F: Fn(usize, &RecordedRequest) -> StubResponse + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let counter = Arc::new(AtomicUsize::new(0));
        let respond: Arc<Responder> = Arc::new(respond);
        {
            let requests = requests.clone();
            let max_in_flight = max_in_flight.clone();
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(stream) = stream else { continue };
                    let (requests, max_in_flight, in_flight, counter, respond) = (
                        requests.clone(),
                        max_in_flight.clone(),
                        in_flight.clone(),
                        counter.clone(),
                        respond.clone(),
                    );
                    std::thread::spawn(move || {
                        let _ = handle(stream, &requests, &max_in_flight, &in_flight, &counter, &*respond);
                    });
                }
            });
        }
        StubServer {
            url,
            requests,
            max_in_flight,
        }
    }

    pub fn request_count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn handle(
    stream: TcpStream,
    requests: &Mutex<Vec<RecordedRequest>>,
    max_in_flight: &AtomicUsize,
    in_flight: &AtomicUsize,
    counter: &AtomicUsize,
    respond: &Responder,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut headers = Vec::new();
    let mut content_length = 0;
    loop {
        line.clear();
        reader.read_line(&mut line)?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        if let Some((k, v)) = trimmed.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let request = RecordedRequest {
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    };

    let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    max_in_flight.fetch_max(now, Ordering::SeqCst);
    let n = counter.fetch_add(1, Ordering::SeqCst);
    requests.lock().unwrap().push(request.clone());
    let response = respond(n, &request);
    std::thread::sleep(response.delay);
    in_flight.fetch_sub(1, Ordering::SeqCst);

    let mut out = stream;
    let mut head = format!(
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
        response.status,
        response.body.len()
    );
    for (k, v) in &response.headers {
        head.push_str(&format!("{k}: {v}\r\n"));
    }
    head.push_str("\r\n");
    out.write_all(head.as_bytes())?;
    out.write_all(response.body.as_bytes())?;
    out.flush()
}

/// Completions-dialect body whose single candidate is `text`.
pub fn completion_body(text: &str) -> String {
    serde_json::json!({"choices": [{"text": text}]}).to_string()
}

/// Extracts the tagged sentence from a default-template prompt.
pub fn tagged_text_of(request: &RecordedRequest) -> String {
    let body: serde_json::Value = serde_json::from_str(&request.body).unwrap();
    let prompt = body["prompt"].as_str().unwrap();
    prompt.trim_end_matches('\n').rsplit('\n').next().unwrap().to_string()
}
