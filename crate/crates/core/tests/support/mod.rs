pub mod oracle;
pub mod checks;
pub mod scenarios;
pub mod golden;
pub mod beam;
