//! Integration mode: the real broker and providers in one process.
//!
//! Every exchange is performed against the broker with real encodings.
//! The link is virtual: each exchange is charged `LinkModel` time for the
//! bytes that actually crossed it, plus the wall time the broker spent.

use std::time::{Duration, Instant};

use cbir_core::protocol::{
    make_messenger, make_parked, AgentEnvelope, DeliveryMode, MessengerCargo, ParkedState, QueryMessage,
    QueryPayload, SessionAck,
};
use cbir_services::broker::AgentReply;
use cbir_services::clock::Clock;
use cbir_services::fixture::{Fixture, FixtureOptions, IN_PROCESS_BROKER};
use cbir_services::ServiceError;

use crate::model::{LinkModel, RoundTrip, Strategy};
use crate::report::{BenchReport, Phase};
use crate::{BenchConfig, BenchError};

/// One query as it happened: the exchanges and the broker's wall time.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub exchanges: Vec<RoundTrip>,
    pub processing: Duration,
}

impl Measurement {
    pub fn seconds(&self, link: &LinkModel) -> f64 {
        self.exchanges.iter().map(|t| link.round_trip_time(*t)).sum::<f64>() + self.processing.as_secs_f64()
    }

    pub fn bytes(&self) -> f64 {
        self.exchanges.iter().map(|t| t.up + t.down).sum()
    }
}

/// All measurements of one integration run, for inspection beyond the report.
#[derive(Debug, Clone)]
pub struct IntegrationRun {
    pub report: BenchReport,
    pub measurements: Vec<(Strategy, Phase, Measurement)>,
}

struct Driver {
    fixture: Fixture,
    k: u32,
    setup_bytes: f64,
}

fn len(bytes: &[u8]) -> f64 {
    bytes.len() as f64
}

fn reply_bytes(reply: &AgentReply) -> Vec<u8> {
    match reply {
        AgentReply::Session(ack) => ack.encode(),
        AgentReply::Agent(env) => env.encode(),
    }
}

impl Driver {
    fn query_image(&self, i: usize) -> QueryPayload {
        let per = self.fixture.files.options.images_per_provider;
        let cell = i % (per * self.fixture.files.providers.len());
        QueryPayload::Image(self.fixture.files.image_bytes(cell / per, cell % per))
    }

    fn parked(&self, mode: DeliveryMode, query: Option<QueryPayload>) -> Result<AgentEnvelope, ServiceError> {
        let state = ParkedState {
            broker_url: IN_PROCESS_BROKER.into(),
            reply_address: None,
            mode,
            initial_query: query,
            k: self.k,
        };
        Ok(make_parked(&state, &self.fixture.client_signer(), self.fixture.clock.now())?)
    }

    fn messenger(&self, cargo: MessengerCargo) -> Result<AgentEnvelope, ServiceError> {
        Ok(make_messenger(IN_PROCESS_BROKER, &cargo, &self.fixture.client_signer(), self.fixture.clock.now())?)
    }

    /// Sends an agent and returns (reply bytes, broker time).
    async fn submit(&self, envelope: AgentEnvelope) -> Result<(Vec<u8>, Duration), ServiceError> {
        let started = Instant::now();
        let inbound = AgentEnvelope::decode(&envelope.encode())?;
        let reply = self.fixture.broker.handle_agent(inbound).await?;
        let bytes = reply_bytes(&reply);
        Ok((bytes, started.elapsed()))
    }

    async fn exchange(&self, session: &str, query: QueryPayload) -> Result<Measurement, ServiceError> {
        let message = QueryMessage {
            session_id: session.to_string(),
            query,
            k: self.k,
        };
        let up = message.encode();
        let started = Instant::now();
        let result = self
            .fixture
            .broker
            .handle_query_message(session, QueryMessage::decode(&up)?)
            .await?;
        let down = result.encode();
        Ok(Measurement {
            exchanges: vec![RoundTrip::new(len(&up), len(&down))],
            processing: started.elapsed(),
        })
    }

    async fn traditional(&self, n: usize) -> Result<Vec<(Phase, Measurement)>, ServiceError> {
        // the request/response server keeps its own session; opening it is not charged
        let ack = self
            .fixture
            .broker
            .host_parked_agent(self.parked(DeliveryMode::Messages, None)?)
            .await?;
        let mut out = Vec::new();
        for i in 0..n {
            let mut m = self.exchange(&ack.session_id, self.query_image(i)).await?;
            if i == 0 {
                m.exchanges.insert(0, RoundTrip::new(0.0, self.setup_bytes));
                out.push((Phase::First, m));
            } else {
                out.push((Phase::Subsequent, m));
            }
        }
        Ok(out)
    }

    async fn parked_messenger(&self, n: usize) -> Result<Vec<(Phase, Measurement)>, ServiceError> {
        let parked = self.parked(DeliveryMode::Messenger, Some(self.query_image(0)))?;
        let parked_len = len(&parked.encode());
        let (ack_bytes, t1) = self.submit(parked).await?;
        let session = SessionAck::decode(&ack_bytes)?.session_id;
        let collect = self.messenger(MessengerCargo::Collect {
            session_id: session.clone(),
        })?;
        let collect_len = len(&collect.encode());
        let (result_bytes, t2) = self.submit(collect).await?;
        let mut out = vec![(
            Phase::First,
            Measurement {
                exchanges: vec![
                    RoundTrip::new(parked_len, len(&ack_bytes)),
                    RoundTrip::new(collect_len, len(&result_bytes)),
                ],
                processing: t1 + t2,
            },
        )];
        for i in 1..n {
            let cargo = MessengerCargo::Query(QueryMessage {
                session_id: session.clone(),
                query: self.query_image(i),
                k: self.k,
            });
            let sent = self.messenger(cargo)?;
            let up = len(&sent.encode());
            let (down, t) = self.submit(sent).await?;
            out.push((
                Phase::Subsequent,
                Measurement {
                    exchanges: vec![RoundTrip::new(up, len(&down))],
                    processing: t,
                },
            ));
        }
        Ok(out)
    }

    async fn parked_messages(&self, n: usize) -> Result<Vec<(Phase, Measurement)>, ServiceError> {
        let parked = self.parked(DeliveryMode::Messages, Some(self.query_image(0)))?;
        let parked_len = len(&parked.encode());
        let (ack_bytes, t1) = self.submit(parked).await?;
        let session = SessionAck::decode(&ack_bytes)?.session_id;
        let started = Instant::now();
        let result = self.fixture.broker.poll_result(&session)?.encode();
        let t2 = started.elapsed();
        let mut out = vec![(
            Phase::First,
            Measurement {
                exchanges: vec![
                    RoundTrip::new(parked_len, len(&ack_bytes)),
                    RoundTrip::new(0.0, len(&result)),
                ],
                processing: t1 + t2,
            },
        )];
        for i in 1..n {
            out.push((Phase::Subsequent, self.exchange(&session, self.query_image(i)).await?));
        }
        Ok(out)
    }
}

/// Runs `n_queries` per strategy against an in-process deployment. The main
/// index is built before timing starts so no strategy pays for it.
pub async fn run_integration(config: &BenchConfig, n_queries: usize) -> Result<IntegrationRun, BenchError> {
    config.validate()?;
    if n_queries == 0 {
        return Err(BenchError::NoQueries);
    }
    let shape = &config.integration;
    let fixture = Fixture::new(FixtureOptions {
        providers: shape.providers,
        images_per_provider: shape.images_per_provider,
        side: shape.side,
        ..FixtureOptions::default()
    })?;
    let report = fixture.broker.reindex_all().await;
    if let Some(f) = report.failed.first() {
        return Err(ServiceError::Network(format!("{}: {}", f.provider_url, f.reason)).into());
    }
    let driver = Driver {
        fixture,
        k: shape.k,
        setup_bytes: config.workload.setup_bytes,
    };
    let mut measurements = Vec::new();
    for strategy in Strategy::ALL {
        let runs = match strategy {
            Strategy::Traditional => driver.traditional(n_queries).await?,
            Strategy::ParkedMessenger => driver.parked_messenger(n_queries).await?,
            Strategy::ParkedMessages => driver.parked_messages(n_queries).await?,
        };
        measurements.extend(runs.into_iter().map(|(phase, m)| (strategy, phase, m)));
    }
    let mut report = BenchReport::default();
    for strategy in Strategy::ALL {
        for phase in [Phase::First, Phase::Subsequent] {
            let samples: Vec<f64> = measurements
                .iter()
                .filter(|(s, p, _)| *s == strategy && *p == phase)
                .map(|(_, _, m)| m.seconds(&config.link))
                .collect();
            report.push(strategy, phase, &samples);
        }
    }
    Ok(IntegrationRun { report, measurements })
}
