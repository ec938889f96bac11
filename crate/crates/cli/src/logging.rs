//! Leveled stderr logging controlled by the `TIEFORGE_LOG` environment
//! variable (`error`, `info` or `debug`; default `info`).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error,
    Info,
    Debug,
}

pub fn level() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("TIEFORGE_LOG").as_deref() {
        Ok("error") => Level::Error,
        Ok("debug") => Level::Debug,
        _ => Level::Info,
    })
}

pub fn enabled(at: Level) -> bool {
    at <= level()
}

macro_rules! info {
    ($($arg:tt)*) => {
        if crate::logging::enabled(crate::logging::Level::Info) {
            eprintln!("[info] {}", format_args!($($arg)*));
        }
    };
}

macro_rules! debug {
    ($($arg:tt)*) => {
        if crate::logging::enabled(crate::logging::Level::Debug) {
            eprintln!("[debug] {}", format_args!($($arg)*));
        }
    };
}

pub(crate) use {debug, info};
