//! Exit-code policy. Every failure funnels into one of three buckets so
//! scripts can branch on the process status: 1 for bad invocations or bad
//! config, 2 for bad or missing data files, 3 for model-endpoint trouble.

use averse_core::calibration::CalibrationError;
use averse_core::campaign::CampaignError;
use averse_core::corpus::CorpusError;
use averse_core::gateway::GatewayError;
use averse_core::impersonation::ImpersonationError;
use averse_core::metrics::MetricsError;
use averse_core::obfuscation::AttackError;
use averse_core::report::ReportError;
use averse_core::verifier::VerifierError;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_GATEWAY: i32 = 3;

/// Terminal failure carrying the message to print and the process status.
#[derive(Debug)]
pub struct CliError {
    pub message: String,
    pub code: i32,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: EXIT_USAGE,
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: EXIT_DATA,
        }
    }

    pub fn gateway(message: impl Into<String>) -> Self {
        CliError {
            message: message.into(),
            code: EXIT_GATEWAY,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

fn gateway_code(err: &GatewayError) -> i32 {
    match err {
        // Config and template shape problems are caught before any request.
        GatewayError::InvalidConfig(_)
        | GatewayError::UnboundPlaceholder { .. }
        | GatewayError::UnknownTemplate { .. }
        | GatewayError::TemplateDir { .. } => EXIT_USAGE,
        // A broken transcript file is bad data, not a bad endpoint.
        GatewayError::TranscriptParse { .. }
        | GatewayError::TranscriptIo { .. }
        | GatewayError::MissingTranscript { .. } => EXIT_DATA,
        GatewayError::Transport { .. }
        | GatewayError::Protocol { .. }
        | GatewayError::DimensionMismatch { .. }
        | GatewayError::ReplayMiss { .. } => EXIT_GATEWAY,
    }
}

fn verifier_code(err: &VerifierError) -> i32 {
    match err {
        VerifierError::InvalidSpec(_) | VerifierError::UnknownScorer(_) => EXIT_USAGE,
        VerifierError::Transport { .. }
        | VerifierError::Protocol { .. }
        | VerifierError::ScoreOutOfRange { .. } => EXIT_GATEWAY,
    }
}

fn metrics_code(err: &MetricsError) -> i32 {
    match err {
        MetricsError::EmptyDenominator => EXIT_DATA,
        MetricsError::Gateway(inner) => gateway_code(inner),
    }
}

fn attack_code(err: &AttackError) -> i32 {
    match err {
        AttackError::InvalidSpec(_) | AttackError::UnknownKind(_) => EXIT_USAGE,
        AttackError::EmptyCompletion => EXIT_GATEWAY,
        AttackError::MissingPerturbation { .. }
        | AttackError::DuplicatePerturbation { .. }
        | AttackError::PerturbationIo { .. }
        | AttackError::PerturbationParse { .. } => EXIT_DATA,
        AttackError::AtTrial { source, .. } => attack_code(source),
        AttackError::Gateway(inner) => gateway_code(inner),
        AttackError::Verifier(inner) => verifier_code(inner),
        AttackError::Metrics(inner) => metrics_code(inner),
    }
}

fn impersonation_code(err: &ImpersonationError) -> i32 {
    match err {
        ImpersonationError::ZeroK => EXIT_USAGE,
        ImpersonationError::EmptyStore | ImpersonationError::MixedAuthors { .. } => EXIT_DATA,
        ImpersonationError::EmptySummary { .. } | ImpersonationError::EmptyCompletion => {
            EXIT_GATEWAY
        }
        ImpersonationError::AtTrial { source, .. } => impersonation_code(source),
        ImpersonationError::Gateway(inner) => gateway_code(inner),
        ImpersonationError::Verifier(inner) => verifier_code(inner),
        ImpersonationError::Metrics(inner) => metrics_code(inner),
    }
}

fn campaign_code(err: &CampaignError) -> i32 {
    match err {
        CampaignError::Io { .. } | CampaignError::Parse { .. } => EXIT_DATA,
        CampaignError::Metrics(inner) => metrics_code(inner),
    }
}

fn report_code(err: &ReportError) -> i32 {
    match err {
        ReportError::NoInputs
        | ReportError::ZeroBins
        | ReportError::UnsupportedFormat { .. } => EXIT_USAGE,
        ReportError::MissingSummary { .. }
        | ReportError::EmptyGroups
        | ReportError::BadAttackName { .. }
        | ReportError::DuplicateFraction { .. } => EXIT_DATA,
        ReportError::Campaign(inner) => campaign_code(inner),
        ReportError::Calibration(inner) => calibration_code(inner),
    }
}

fn calibration_code(err: &CalibrationError) -> i32 {
    // Everything here is a property of the scored trials or the output
    // stream, never of the invocation.
    let _ = err;
    EXIT_DATA
}

impl From<CorpusError> for CliError {
    fn from(err: CorpusError) -> Self {
        CliError::data(err.to_string())
    }
}

impl From<VerifierError> for CliError {
    fn from(err: VerifierError) -> Self {
        CliError {
            code: verifier_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(err: GatewayError) -> Self {
        CliError {
            code: gateway_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(err: CalibrationError) -> Self {
        CliError {
            code: calibration_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<AttackError> for CliError {
    fn from(err: AttackError) -> Self {
        CliError {
            code: attack_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<ImpersonationError> for CliError {
    fn from(err: ImpersonationError) -> Self {
        CliError {
            code: impersonation_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<CampaignError> for CliError {
    fn from(err: CampaignError) -> Self {
        CliError {
            code: campaign_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(err: ReportError) -> Self {
        CliError {
            code: report_code(&err),
            message: err.to_string(),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(err: MetricsError) -> Self {
        CliError {
            code: metrics_code(&err),
            message: err.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_trial_errors_classify_by_source() {
        let err = AttackError::AtTrial {
            trial_id: "t9".into(),
            source: Box::new(AttackError::Gateway(GatewayError::Transport {
                endpoint: "http://x".into(),
                attempts: 3,
                message: "refused".into(),
            })),
        };
        assert_eq!(CliError::from(err).code, EXIT_GATEWAY);

        let err = AttackError::AtTrial {
            trial_id: "t9".into(),
            source: Box::new(AttackError::MissingPerturbation {
                trial_id: "t9".into(),
            }),
        };
        assert_eq!(CliError::from(err).code, EXIT_DATA);
    }

    #[test]
    fn config_shaped_errors_are_usage() {
        assert_eq!(
            CliError::from(VerifierError::UnknownScorer("x".into())).code,
            EXIT_USAGE
        );
        assert_eq!(
            CliError::from(GatewayError::InvalidConfig("bad".into())).code,
            EXIT_USAGE
        );
    }

    #[test]
    fn replay_miss_is_a_gateway_failure() {
        let err = GatewayError::ReplayMiss { key: "abc".into() };
        assert_eq!(CliError::from(err).code, EXIT_GATEWAY);
    }
}
