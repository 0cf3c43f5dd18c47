use std::path::Path;

use cbir_bench::integration::run_integration;
use cbir_bench::{run_bench, BenchConfig, BenchReport};
use cbir_core::gabor::{extract_feature, FilterBank, FilterBankParams, TextureFeatureVector};
use cbir_core::imaging::load_for_indexing;
use cbir_core::protocol::{DeliveryMode, KeyRing, QueryPayload, ResultMessage, ResultStatus, SearchOutcome, Secret};
use cbir_services::broker::{DispatchReport, RetrieveRequest};
use cbir_services::client::BrokerClient;
use cbir_services::ServiceError;
use serde_json::json;

use crate::args::{BenchMode, Format, Mode, SessionArgs};
use crate::error::CliError;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::file(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::file(path, e))
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("output values serialize")
}

fn broker_client(args: &SessionArgs) -> Result<BrokerClient, CliError> {
    let secret = Secret::from_file(&args.secret_file).map_err(|e| CliError::file(&args.secret_file, e))?;
    let keys = KeyRing::new(args.principal.clone()).with_peer(args.broker_principal.clone(), secret);
    Ok(BrokerClient::new(&args.broker, keys, &args.broker_principal))
}

pub async fn index(broker: &str, format: Format) -> Result<String, CliError> {
    let client = BrokerClient::new(broker, KeyRing::new("operator"), "broker");
    let report = client.reindex().await?;
    Ok(match format {
        Format::Json => to_json(&report),
        Format::Table => index_table(&report),
    })
}

fn index_table(report: &DispatchReport) -> String {
    let mut out = format!("dispatched {} index agents\n", report.dispatched);
    for m in &report.merged {
        out += &format!(
            "merged  {}  entries={} skipped={} ({})\n",
            m.provider_url, m.entries, m.skipped, m.outcome
        );
    }
    for f in &report.failed {
        out += &format!("failed  {}  {}\n", f.provider_url, f.reason);
    }
    out += &format!("index entries: {}\n", report.index_entries);
    out
}

pub async fn query(args: &SessionArgs, image: &Path, k: u32, mode: Mode, format: Format) -> Result<String, CliError> {
    if k == 0 {
        return Err(CliError::Usage("-k must be at least 1".into()));
    }
    let bytes = read(image)?;
    let client = broker_client(args)?;
    let mode = match mode {
        Mode::Messenger => DeliveryMode::Messenger,
        Mode::Messages => DeliveryMode::Messages,
    };
    let ack = client
        .open_session(mode, Some(QueryPayload::Image(bytes)), k, None)
        .await?;
    let result = match mode {
        DeliveryMode::Messenger => client.collect(&ack.session_id).await?,
        DeliveryMode::Messages => client.poll(&ack.session_id).await?,
    };
    match &result.status {
        ResultStatus::Ok => {}
        ResultStatus::Pending => return Err(ServiceError::Internal("query is still pending".into()).into()),
        ResultStatus::Error(e) => return Err(ServiceError::Input(e.clone()).into()),
    }
    Ok(match format {
        Format::Json => to_json(&result),
        Format::Table => ranking_table(&result),
    })
}

/// Ranked descriptors with fixed six-decimal similarity.
pub fn ranking_table(result: &ResultMessage) -> String {
    let mut out = format!("{:>4}  {:>12}  {:<40}  {}\n", "rank", "similarity", "provider", "image");
    for (i, d) in result.results.iter().enumerate() {
        let similarity = d.similarity.map_or_else(|| "-".to_string(), |s| format!("{s:.6}"));
        out += &format!("{:>4}  {:>12}  {:<40}  {}\n", i + 1, similarity, d.provider_url, d.image_id);
    }
    out
}

/// Splits `<provider url>/<image id>` at the last slash.
pub fn split_image_ref(id: &str) -> Result<(&str, &str), CliError> {
    match id.rsplit_once('/') {
        Some((provider, image)) if !provider.is_empty() && !image.is_empty() => Ok((provider, image)),
        _ => Err(CliError::Usage(format!("--id must be <provider url>/<image id>, got {id:?}"))),
    }
}

pub async fn retrieve(
    args: &SessionArgs,
    id: &str,
    license: Option<&str>,
    purchaser: &str,
    out: &Path,
    format: Format,
) -> Result<String, CliError> {
    let (provider_url, image_id) = split_image_ref(id)?;
    let client = broker_client(args)?;
    let ack = client.open_session(DeliveryMode::Messages, None, 1, None).await?;
    let request = RetrieveRequest {
        provider_url: provider_url.to_string(),
        image_id: image_id.to_string(),
        token: license.unwrap_or_default().to_string(),
        purchaser_id: purchaser.to_string(),
    };
    let item = client
        .retrieve(&ack.session_id, vec![request])
        .await?
        .into_iter()
        .next()
        .ok_or_else(|| ServiceError::Internal("broker returned no retrieval result".into()))?;
    let (image_format, bytes) = match item.outcome {
        SearchOutcome::Image { format, bytes } => (format, bytes),
        SearchOutcome::AccessDenied { reason } => return Err(ServiceError::AccessDenied(reason).into()),
        SearchOutcome::NotFound => return Err(ServiceError::NotFound(id.to_string()).into()),
        SearchOutcome::Failed { reason } => return Err(ServiceError::Network(reason).into()),
    };
    write(out, &bytes)?;
    Ok(match format {
        Format::Json => to_json(&json!({
            "provider_url": item.provider_url,
            "image_id": item.image_id,
            "format": image_format,
            "bytes": bytes.len(),
            "out": out.display().to_string(),
        })),
        Format::Table => format!(
            "wrote {} ({} bytes, {}) watermarked for {purchaser}\n",
            out.display(),
            bytes.len(),
            image_format.mime()
        ),
    })
}

pub fn feature_of(bytes: &[u8]) -> Result<TextureFeatureVector, CliError> {
    let image = load_for_indexing(bytes).map_err(|e| ServiceError::Input(e.to_string()))?;
    let bank = FilterBank::new(FilterBankParams::default()).expect("default bank parameters are valid");
    Ok(extract_feature(&image, &bank))
}

pub fn extract(image: &Path, format: Format) -> Result<String, CliError> {
    let feature = feature_of(&read(image)?)?;
    Ok(match format {
        Format::Json => to_json(&feature),
        Format::Table => feature.elements().iter().map(|v| format!("{v:.6}\n")).collect(),
    })
}

pub async fn bench(
    config: Option<&Path>,
    queries: usize,
    seed: u64,
    out: Option<&Path>,
    mode: BenchMode,
) -> Result<String, CliError> {
    let config = match config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    let report: BenchReport = match mode {
        BenchMode::Simulated => run_bench(&config, queries, seed)?,
        BenchMode::Integration => run_integration(&config, queries).await?.report,
    };
    if let Some(path) = out {
        write(path, report.to_csv().as_bytes())?;
    }
    Ok(report.to_table())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_refs_split_at_the_last_slash() {
        let (p, i) = split_image_ref("http://provider.test:8080/archive/img03").unwrap();
        assert_eq!((p, i), ("http://provider.test:8080/archive", "img03"));
        assert!(split_image_ref("img03").is_err());
        assert!(split_image_ref("http://p/").is_err());
    }
}
