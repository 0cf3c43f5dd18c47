//! Constructors for each agent kind.

use super::messages::{IndexState, IndexTask, MessengerCargo, ParkedState, SearchItem, SearchState, SearchTask};
use super::{check_url, AgentEnvelope, AgentKind, Certificate, ProtocolError, Signer, PROTOCOL_VERSION};
use crate::gabor::FilterBankParams;
use crate::Timestamp;

fn envelope(kind: AgentKind, itinerary: Vec<String>, state: Vec<u8>) -> AgentEnvelope {
    AgentEnvelope {
        version: PROTOCOL_VERSION,
        kind,
        agent_id: uuid::Uuid::new_v4().to_string(),
        itinerary,
        state,
        certificate: Certificate {
            issuer: String::new(),
            subject: String::new(),
            not_after: Timestamp(0),
            mac: Vec::new(),
        },
    }
}

/// A parked agent that camps at `state.broker_url` for one client session.
pub fn make_parked(state: &ParkedState, signer: &Signer, now: Timestamp) -> Result<AgentEnvelope, ProtocolError> {
    check_url(&state.broker_url)?;
    if let Some(reply) = &state.reply_address {
        check_url(reply)?;
    }
    let env = envelope(AgentKind::Parked, vec![state.broker_url.clone()], state.encode());
    Ok(signer.seal(env, now))
}

/// A provider an index agent should visit, with the signer for that hop.
#[derive(Debug, Clone)]
pub struct IndexTarget {
    pub provider_url: String,
    pub signer: Signer,
}

/// One index agent per distinct provider, each going out and returning to
/// the broker. Order follows the first occurrence of each URL.
pub fn make_index(
    targets: &[IndexTarget],
    broker_url: &str,
    bank: &FilterBankParams,
    now: Timestamp,
) -> Result<Vec<AgentEnvelope>, ProtocolError> {
    check_url(broker_url)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for t in targets {
        if !seen.insert(t.provider_url.as_str()) {
            continue;
        }
        check_url(&t.provider_url)?;
        let state = IndexState::Task(IndexTask {
            broker_url: broker_url.to_string(),
            bank: *bank,
        });
        let env = envelope(
            AgentKind::Index,
            vec![t.provider_url.clone(), broker_url.to_string()],
            state.encode(),
        );
        out.push(t.signer.seal(env, now));
    }
    if out.is_empty() {
        return Err(ProtocolError::NoProviders);
    }
    Ok(out)
}

/// Items to fetch from one provider.
#[derive(Debug, Clone)]
pub struct SearchTarget {
    pub provider_url: String,
    pub signer: Signer,
    pub items: Vec<SearchItem>,
}

/// One search agent per provider. Targets naming the same provider are
/// merged into a single agent carrying all their items.
pub fn make_search(
    targets: &[SearchTarget],
    broker_url: &str,
    session_id: &str,
    now: Timestamp,
) -> Result<Vec<AgentEnvelope>, ProtocolError> {
    check_url(broker_url)?;
    let mut grouped: Vec<(&SearchTarget, Vec<SearchItem>)> = Vec::new();
    for t in targets {
        check_url(&t.provider_url)?;
        match grouped.iter_mut().find(|(g, _)| g.provider_url == t.provider_url) {
            Some((_, items)) => items.extend(t.items.iter().cloned()),
            None => grouped.push((t, t.items.clone())),
        }
    }
    if grouped.is_empty() {
        return Err(ProtocolError::NoProviders);
    }
    Ok(grouped
        .into_iter()
        .map(|(t, items)| {
            let state = SearchState::Task(SearchTask {
                session_id: session_id.to_string(),
                items,
            });
            let env = envelope(
                AgentKind::Search,
                vec![t.provider_url.clone(), broker_url.to_string()],
                state.encode(),
            );
            t.signer.seal(env, now)
        })
        .collect())
}

/// A single-hop messenger carrying `cargo` to `destination`.
pub fn make_messenger(
    destination: &str,
    cargo: &MessengerCargo,
    signer: &Signer,
    now: Timestamp,
) -> Result<AgentEnvelope, ProtocolError> {
    check_url(destination)?;
    let env = envelope(AgentKind::Messenger, vec![destination.to_string()], cargo.encode());
    Ok(signer.seal(env, now))
}

/// The same agent on its way back: kind, id and itinerary are kept, the
/// state is replaced and the envelope is re-signed by the current host.
pub fn make_return(inbound: &AgentEnvelope, state: Vec<u8>, signer: &Signer, now: Timestamp) -> AgentEnvelope {
    let env = AgentEnvelope {
        state,
        ..inbound.clone()
    };
    signer.seal(env, now)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{DeliveryMode, KeyRing, QueryMessage, QueryPayload, Secret};
    use std::time::Duration;

    const BROKER: &str = "http://broker:7070";

    fn signer() -> Signer {
        Signer {
            issuer: "broker".into(),
            subject: "broker".into(),
            secret: Secret::new(b"k".to_vec()),
            validity: Duration::from_secs(60),
        }
    }

    fn parked(query: Option<QueryPayload>) -> ParkedState {
        ParkedState {
            broker_url: BROKER.into(),
            reply_address: None,
            mode: DeliveryMode::Messages,
            initial_query: query,
            k: 5,
        }
    }

    #[test]
    fn parked_state_decodes_back() {
        let st = parked(Some(QueryPayload::Image(vec![1, 2])));
        let e = make_parked(&st, &signer(), Timestamp(0)).unwrap();
        assert_eq!(e.kind, AgentKind::Parked);
        assert_eq!(e.itinerary, vec![BROKER.to_string()]);
        assert_eq!(ParkedState::decode(&e.state).unwrap(), st);
        let ring = KeyRing::new("x").with_peer("broker", Secret::new(b"k".to_vec()));
        ring.verify_kind(&e, AgentKind::Parked, Timestamp(1)).unwrap();
    }

    #[test]
    fn parked_without_query() {
        let e = make_parked(&parked(None), &signer(), Timestamp(0)).unwrap();
        assert_eq!(ParkedState::decode(&e.state).unwrap().initial_query, None);
        assert_eq!(e.itinerary.len(), 1);
    }

    #[test]
    fn parked_rejects_bad_urls() {
        let mut st = parked(None);
        st.broker_url = "broker".into();
        assert!(matches!(
            make_parked(&st, &signer(), Timestamp(0)),
            Err(ProtocolError::InvalidUrl { .. })
        ));
        let mut st = parked(None);
        st.reply_address = Some("::".into());
        assert!(make_parked(&st, &signer(), Timestamp(0)).is_err());
    }

    fn target(url: &str) -> IndexTarget {
        IndexTarget {
            provider_url: url.into(),
            signer: signer(),
        }
    }

    #[test]
    fn one_index_agent_per_provider() {
        let bank = FilterBankParams::default();
        let ts = [target("http://p1"), target("http://p2"), target("http://p3")];
        let agents = make_index(&ts, BROKER, &bank, Timestamp(0)).unwrap();
        assert_eq!(agents.len(), 3);
        for (a, t) in agents.iter().zip(&ts) {
            assert_eq!(a.itinerary, vec![t.provider_url.clone(), BROKER.to_string()]);
            match IndexState::decode(&a.state).unwrap() {
                IndexState::Task(task) => assert_eq!(task.bank, bank),
                other => panic!("unexpected state {other:?}"),
            }
        }
        let ids: std::collections::HashSet<_> = agents.iter().map(|a| &a.agent_id).collect();
        assert_eq!(ids.len(), 3);
    }

    #[test]
    fn duplicate_providers_collapse() {
        let ts = [target("http://p1"), target("http://p1")];
        assert_eq!(make_index(&ts, BROKER, &FilterBankParams::default(), Timestamp(0)).unwrap().len(), 1);
        assert_eq!(
            make_index(&[], BROKER, &FilterBankParams::default(), Timestamp(0)),
            Err(ProtocolError::NoProviders)
        );
    }

    #[test]
    fn search_agents_group_by_provider() {
        let item = |id: &str| SearchItem {
            image_id: id.into(),
            token: "t".into(),
            purchaser_id: "alice".into(),
        };
        let t = |url: &str, ids: &[&str]| SearchTarget {
            provider_url: url.into(),
            signer: signer(),
            items: ids.iter().map(|i| item(i)).collect(),
        };
        let agents = make_search(&[t("http://p1", &["a"]), t("http://p2", &["b"]), t("http://p1", &["c"])], BROKER, "s", Timestamp(0))
            .unwrap();
        assert_eq!(agents.len(), 2);
        match SearchState::decode(&agents[0].state).unwrap() {
            SearchState::Task(task) => {
                assert_eq!(task.session_id, "s");
                assert_eq!(task.items, vec![item("a"), item("c")]);
            }
            other => panic!("unexpected state {other:?}"),
        }
    }

    #[test]
    fn messenger_carries_cargo() {
        let cargo = MessengerCargo::Query(QueryMessage {
            session_id: "s".into(),
            query: QueryPayload::Image(vec![7]),
            k: 3,
        });
        let e = make_messenger(BROKER, &cargo, &signer(), Timestamp(0)).unwrap();
        assert_eq!(e.kind, AgentKind::Messenger);
        assert_eq!(MessengerCargo::decode(&e.state).unwrap(), cargo);
    }

    #[test]
    fn returning_agent_keeps_identity() {
        let inbound = make_messenger(BROKER, &MessengerCargo::Collect { session_id: "s".into() }, &signer(), Timestamp(0)).unwrap();
        let mut back_signer = signer();
        back_signer.issuer = "provider".into();
        let back = make_return(&inbound, vec![4, 2], &back_signer, Timestamp(7));
        assert_eq!((back.kind, &back.agent_id, &back.itinerary), (inbound.kind, &inbound.agent_id, &inbound.itinerary));
        assert_eq!(back.state, vec![4, 2]);
        assert_eq!(back.certificate.issuer, "provider");
        assert_eq!(back.certificate.not_after, Timestamp(60_007));
    }
}
