use gaussq_core::ErrorKind;

pub const USAGE: u8 = 2;
pub const IO: u8 = 3;
pub const FORMAT: u8 = 4;
pub const NUMERIC: u8 = 5;

/// Process exit status for a failed command.
pub fn code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<gaussq_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => USAGE,
                ErrorKind::Io => IO,
                ErrorKind::Format => FORMAT,
                ErrorKind::Numeric => NUMERIC,
            };
        }
        if cause.is::<std::io::Error>() {
            return IO;
        }
        if cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return FORMAT;
        }
    }
    USAGE
}
