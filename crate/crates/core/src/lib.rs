pub mod corpus;
pub mod harness;
pub mod ndcore;
pub mod oracle;
pub mod rouge;
pub mod sidenet;
