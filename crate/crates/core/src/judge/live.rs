//! HTTP backend speaking the chat-completions and embeddings JSON protocol.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::backend::{Backend, ChatOutput, ChatRequest, Usage};
use super::EndpointConfig;
use crate::error::{Error, Result};

const WINDOW: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Sliding-window limiter: at most `per_minute` acquisitions in any 60 s window.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(per_minute: usize) -> Self {
        Self::with_window(per_minute, WINDOW)
    }

    pub fn with_window(per_minute: usize, window: Duration) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1),
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().expect("limiter lock");
                let now = Instant::now();
                while stamps
                    .front()
                    .is_some_and(|t| now.duration_since(*t) >= self.window)
                {
                    stamps.pop_front();
                }
                if stamps.len() < self.per_minute {
                    stamps.push_back(now);
                    return;
                }
                self.window - now.duration_since(*stamps.front().expect("nonempty"))
            };
            thread::sleep(wait);
        }
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyGate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a ConcurrencyGate);

impl ConcurrencyGate {
    pub fn new(limit: usize) -> Self {
        ConcurrencyGate {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

struct Throttle {
    limiter: RateLimiter,
    gate: ConcurrencyGate,
}

enum Attempt {
    Done(Value),
    Retry(String),
    Fail(Error),
}

pub struct LiveBackend {
    agent: ureq::Agent,
    retry: RetryPolicy,
    throttles: Mutex<HashMap<String, Arc<Throttle>>>,
}

impl LiveBackend {
    pub fn new(retry: RetryPolicy) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        LiveBackend {
            agent,
            retry,
            throttles: Mutex::new(HashMap::new()),
        }
    }

    fn throttle(&self, endpoint: &EndpointConfig) -> Arc<Throttle> {
        let key = format!("{}|{}", endpoint.base_url, endpoint.model_name);
        self.throttles
            .lock()
            .expect("throttle map lock")
            .entry(key)
            .or_insert_with(|| {
                Arc::new(Throttle {
                    limiter: RateLimiter::new(endpoint.requests_per_minute as usize),
                    gate: ConcurrencyGate::new(endpoint.max_concurrency as usize),
                })
            })
            .clone()
    }

    fn post(&self, endpoint: &EndpointConfig, route: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{route}", endpoint.base_url.trim_end_matches('/'));
        let key = std::env::var(&endpoint.api_key_env).ok();
        let throttle = self.throttle(endpoint);
        let mut last = String::new();
        for attempt in 0..=self.retry.max_retries {
            if attempt > 0 {
                thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            let outcome = {
                let _permit = throttle.gate.acquire();
                throttle.limiter.acquire();
                self.send_once(&url, key.as_deref(), body)
            };
            match outcome {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::warn!("{url}: attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "{url}: giving up after {} attempts: {last}",
            self.retry.max_retries + 1
        )))
    }

    fn send_once(&self, url: &str, key: Option<&str>, body: &Value) -> Attempt {
        let mut req = self.agent.post(url);
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fail(Error::Transport(format!("{url}: invalid JSON body: {e}"))),
            },
            429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fail(Error::Transport(format!("{url}: HTTP {status}: {text}"))),
        }
    }
}

impl Backend for LiveBackend {
    fn chat(&self, endpoint: &EndpointConfig, request: &ChatRequest) -> Result<ChatOutput> {
        let mut body = json!({
            "model": endpoint.model_name,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": endpoint.temperature,
            "max_tokens": endpoint.max_output_tokens,
        });
        for (k, v) in &endpoint.extra_params {
            body[k] = v.clone();
        }
        let v = self.post(endpoint, "chat/completions", &body)?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                Error::Transport("chat response lacks choices[0].message.content".into())
            })?
            .to_string();
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(ChatOutput { text, usage })
    }

    fn embed(&self, endpoint: &EndpointConfig, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let body = json!({"model": endpoint.model_name, "input": texts});
        let v = self.post(endpoint, "embeddings", &body)?;
        let data = v["data"]
            .as_array()
            .ok_or_else(|| Error::Transport("embedding response lacks `data`".into()))?;
        let mut out = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item["index"].as_u64().map_or(pos, |i| i as usize);
            let vec = item["embedding"]
                .as_array()
                .ok_or_else(|| Error::Transport("embedding item lacks `embedding`".into()))?
                .iter()
                .map(|x| {
                    x.as_f64()
                        .ok_or_else(|| Error::Transport("non-numeric embedding".into()))
                })
                .collect::<Result<Vec<f64>>>()?;
            if idx >= out.len() {
                return Err(Error::Transport(format!(
                    "embedding index {idx} out of range"
                )));
            }
            out[idx] = Some(vec);
        }
        out.into_iter()
            .enumerate()
            .map(|(i, v)| v.ok_or_else(|| Error::Transport(format!("missing embedding {i}"))))
            .collect()
    }

    fn is_live(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn limiter_caps_acquisitions_per_window() {
        let lim = RateLimiter::with_window(3, Duration::from_millis(200));
        let start = Instant::now();
        for _ in 0..3 {
            lim.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(100));
        lim.acquire();
        assert!(start.elapsed() >= Duration::from_millis(190));
    }

    #[test]
    fn gate_bounds_in_flight_work() {
        let gate = Arc::new(ConcurrencyGate::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (gate, active, peak) = (gate.clone(), active.clone(), peak.clone());
                thread::spawn(move || {
                    let _p = gate.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    thread::sleep(Duration::from_millis(10));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
