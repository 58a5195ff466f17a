use std::fmt;
use std::fs;
use std::path::Path;
use std::process::ExitCode;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid or missing parameter (exit 2).
    Config(String),
    /// Calibration bracket does not straddle α (exit 3).
    Bracket(String),
    /// Unreadable or corrupt frame file (exit 4).
    Frame(String),
    /// Anything else, e.g. an output file that cannot be written (exit 1).
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Bracket(_) => 3,
            CliError::Frame(_) => 4,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Bracket(m) | CliError::Frame(m) | CliError::Other(m) => f.write_str(m),
        }
    }
}

impl From<tdet::Error> for CliError {
    fn from(e: tdet::Error) -> Self {
        use tdet::Error as E;
        let msg = e.to_string();
        match e {
            E::Domain(_) | E::Usage(_) | E::Size { .. } => CliError::Config(msg),
            E::Bracket { .. } => CliError::Bracket(msg),
            E::CorruptFrame { .. } => CliError::Frame(msg),
            E::Rejected(_) | E::Io(_) | E::Json(_) | E::Csv(_) => CliError::Other(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

/// Overlays the flags given on the command line onto the `--config` file, if any.
///
/// Both sides use the flag names as keys. Keys the command does not know are rejected.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(cli: &T, config: Option<&Path>) -> CliResult<T> {
    let Some(path) = config else {
        return to_value(cli).and_then(|v| from_value(v, "command line"));
    };
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("--config {shown}: {e}")))?;
    let mut merged: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("--config {shown}: {e}")))?;
    let Value::Object(base) = &mut merged else {
        return config_err(format!("--config {shown}: expected a JSON object"));
    };
    let Value::Object(known) = to_value(&T::default())? else {
        unreachable!("argument structs serialize to objects")
    };
    if let Some(k) = base.keys().find(|k| !known.contains_key(*k)) {
        return config_err(format!("--config {shown}: unknown field {k:?}"));
    }
    if let Value::Object(flags) = to_value(cli)? {
        for (k, v) in flags {
            if !v.is_null() {
                base.insert(k, v);
            }
        }
    }
    from_value(merged, &format!("--config {shown}"))
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Other(e.to_string()))
}

fn from_value<T: DeserializeOwned>(v: Value, origin: &str) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("{origin}: {e}")))
}

pub fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Config(format!("missing --{flag}")))
}

pub fn check_open_unit(v: f64, flag: &str) -> CliResult<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        config_err(format!("--{flag} {v}: must lie in (0, 1)"))
    }
}

pub fn check_positive(v: f64, flag: &str) -> CliResult<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        config_err(format!("--{flag} {v}: must be positive"))
    }
}

pub fn check_nonzero(v: u64, flag: &str) -> CliResult<u64> {
    if v > 0 {
        Ok(v)
    } else {
        config_err(format!("--{flag} must be at least 1"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;
    use std::io::Write;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, rename_all = "kebab-case")]
    struct Args {
        alpha: Option<f64>,
        cal_reps: Option<u64>,
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn flags_override_the_file() {
        let f = file(r#"{"alpha": 0.01, "cal-reps": 5000}"#);
        let cli = Args {
            alpha: Some(0.001),
            cal_reps: None,
        };
        let got: Args = resolve(&cli, Some(f.path())).unwrap();
        assert_eq!(got, Args { alpha: Some(0.001), cal_reps: Some(5000) });
    }

    #[test]
    fn unknown_keys_and_bad_types_are_config_errors() {
        let f = file(r#"{"alhpa": 0.01}"#);
        assert!(matches!(resolve(&Args::default(), Some(f.path())), Err(CliError::Config(_))));
        let f = file(r#"{"alpha": "x"}"#);
        assert!(matches!(resolve(&Args::default(), Some(f.path())), Err(CliError::Config(_))));
        let f = file("[1]");
        assert!(matches!(resolve(&Args::default(), Some(f.path())), Err(CliError::Config(_))));
    }

    #[test]
    fn range_checks_name_the_flag() {
        let CliError::Config(m) = check_open_unit(1.5, "alpha").unwrap_err() else { panic!() };
        assert!(m.contains("--alpha"));
    }
}
