pub mod oracle;
pub mod tiny_net;
