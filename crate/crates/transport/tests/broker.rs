use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use ei_model::DatasetName;
use ei_transport::{
    Broker, BrokerClient, BrokerConfig, ControlBody, ControlMessage, TransportError,
    ValidationNotice,
};

fn notice(n: u64) -> ControlMessage {
    ControlMessage::new(
        n,
        1_000 + n,
        ControlBody::ValidationNotice(ValidationNotice {
            dataset: DatasetName::parse("data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824")
                .unwrap(),
            validation_uri: format!("local://ei/validation.{n}.json"),
        }),
    )
}

fn start_broker(dir: &std::path::Path, redelivery_ms: u64) -> ei_transport::BrokerHandle {
    Broker::start(
        "127.0.0.1:0",
        BrokerConfig::new(dir).with_redelivery_timeout(Duration::from_millis(redelivery_ms)),
    )
    .unwrap()
}

#[test]
fn send_deliver_ack_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 400);

    let mut client = BrokerClient::connect(broker.addr).unwrap();
    let sent = notice(1);
    let id = client.send("supervisor", &sent).unwrap();

    let sub = BrokerClient::connect(broker.addr).unwrap();
    let mut sub = sub.subscribe("supervisor").unwrap();
    let delivery = sub
        .recv_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("message delivered");
    assert_eq!(delivery.broker_id, id);
    assert_eq!(delivery.message, sent);
    sub.ack(id).unwrap();

    // Acked messages are never redelivered, even past the timeout.
    let again = sub.recv_timeout(Duration::from_millis(900)).unwrap();
    assert!(again.is_none(), "acked message was redelivered");
    broker.shutdown();
}

#[test]
fn unacked_messages_are_redelivered_after_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 250);

    let mut client = BrokerClient::connect(broker.addr).unwrap();
    let id = client.send("supervisor", &notice(1)).unwrap();

    let mut sub = BrokerClient::connect(broker.addr)
        .unwrap()
        .subscribe("supervisor")
        .unwrap();
    let first = sub
        .recv_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("first delivery");
    assert_eq!(first.broker_id, id);
    // No ack: the same message must come around again.
    let second = sub
        .recv_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("redelivery");
    assert_eq!(second.broker_id, id);
    assert_eq!(second.message, first.message);
    sub.ack(id).unwrap();
    broker.shutdown();
}

#[test]
fn each_message_goes_to_exactly_one_of_two_subscribers() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 5_000);

    let mut client = BrokerClient::connect(broker.addr).unwrap();
    let mut sent_ids = BTreeSet::new();
    for n in 0..10 {
        sent_ids.insert(client.send("supervisor", &notice(n)).unwrap());
    }

    let mut subs = vec![
        BrokerClient::connect(broker.addr)
            .unwrap()
            .subscribe("supervisor")
            .unwrap(),
        BrokerClient::connect(broker.addr)
            .unwrap()
            .subscribe("supervisor")
            .unwrap(),
    ];
    let mut seen: Vec<u64> = Vec::new();
    let mut idle_rounds = 0;
    while idle_rounds < 3 {
        let mut progressed = false;
        for sub in subs.iter_mut() {
            if let Some(d) = sub.recv_timeout(Duration::from_millis(300)).unwrap() {
                sub.ack(d.broker_id).unwrap();
                seen.push(d.broker_id);
                progressed = true;
            }
        }
        if progressed {
            idle_rounds = 0;
        } else {
            idle_rounds += 1;
        }
    }
    let unique: BTreeSet<u64> = seen.iter().copied().collect();
    assert_eq!(unique.len(), seen.len(), "a message was delivered twice: {seen:?}");
    assert_eq!(unique, sent_ids);
    broker.shutdown();
}

#[test]
fn single_subscriber_sees_sender_order() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 5_000);

    let mut client = BrokerClient::connect(broker.addr).unwrap();
    for n in 0..5 {
        client.send("q", &notice(n)).unwrap();
    }
    let mut sub = BrokerClient::connect(broker.addr)
        .unwrap()
        .subscribe("q")
        .unwrap();
    let mut got = Vec::new();
    for _ in 0..5 {
        let d = sub
            .recv_timeout(Duration::from_secs(5))
            .unwrap()
            .expect("delivery");
        got.push(d.message.msg_id);
        sub.ack(d.broker_id).unwrap();
    }
    assert_eq!(got, vec![0, 1, 2, 3, 4]);
    broker.shutdown();
}

#[test]
fn messages_survive_broker_restart() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 400);
    let mut client = BrokerClient::connect(broker.addr).unwrap();
    let sent = notice(9);
    client.send("supervisor", &sent).unwrap();
    broker.shutdown();

    let broker = start_broker(dir.path(), 400);
    let mut sub = BrokerClient::connect(broker.addr)
        .unwrap()
        .subscribe("supervisor")
        .unwrap();
    let d = sub
        .recv_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("durable message survives restart");
    assert_eq!(d.message, sent);
    sub.ack(d.broker_id).unwrap();
    broker.shutdown();
}

#[test]
fn subscriber_disconnect_requeues_for_another_subscriber() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 60_000); // long timeout: requeue must come from the drop

    let mut client = BrokerClient::connect(broker.addr).unwrap();
    let sent = notice(5);
    client.send("q", &sent).unwrap();

    let mut sub1 = BrokerClient::connect(broker.addr)
        .unwrap()
        .subscribe("q")
        .unwrap();
    let d = sub1
        .recv_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("first delivery");
    drop(sub1); // connection drops without ack

    let mut sub2 = BrokerClient::connect(broker.addr)
        .unwrap()
        .subscribe("q")
        .unwrap();
    let d2 = sub2
        .recv_timeout(Duration::from_secs(5))
        .unwrap()
        .expect("requeued delivery");
    assert_eq!(d2.broker_id, d.broker_id);
    assert_eq!(d2.message, sent);
    sub2.ack(d2.broker_id).unwrap();
    broker.shutdown();
}

#[test]
fn oversized_send_is_rejected_by_client_and_server() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 400);

    // Client side: serialization refuses before any bytes hit the wire.
    let mut big = notice(1);
    if let ControlBody::ValidationNotice(n) = &mut big.body {
        n.validation_uri = format!("local://ei/{}", "x".repeat(70_000));
    }
    let mut client = BrokerClient::connect(broker.addr).unwrap();
    assert!(matches!(
        client.send("q", &big),
        Err(TransportError::MessageTooLarge { .. })
    ));

    // Server side: a raw oversized SEND gets an ERR reply.
    let mut raw = TcpStream::connect(broker.addr).unwrap();
    raw.write_all(b"SEND q 70000\n").unwrap();
    raw.write_all(&vec![b'x'; 70_000]).unwrap();
    let mut reply = [0u8; 64];
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let n = raw.read(&mut reply).unwrap();
    let text = String::from_utf8_lossy(&reply[..n]);
    assert!(text.starts_with("ERR"), "got {text:?}");
    broker.shutdown();
}

#[test]
fn malformed_commands_get_err_replies() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 400);
    let mut raw = TcpStream::connect(broker.addr).unwrap();
    raw.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    for (cmd, expect) in [
        ("NONSENSE\n", "ERR unknown command"),
        ("SEND onlyqueue\n", "ERR bad SEND syntax"),
        ("SEND bad/queue 3\n", "ERR bad queue name"),
        ("SUBSCRIBE bad/queue\n", "ERR bad queue name"),
        ("ACK notanumber\n", "ERR bad ACK syntax"),
    ] {
        raw.write_all(cmd.as_bytes()).unwrap();
        let mut reply = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            raw.read_exact(&mut byte).unwrap();
            if byte[0] == b'\n' {
                break;
            }
            reply.push(byte[0]);
        }
        let text = String::from_utf8_lossy(&reply);
        assert!(text.starts_with(expect), "{cmd:?} -> {text:?}");
    }
    broker.shutdown();
}

#[test]
fn empty_queue_times_out_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let broker = start_broker(dir.path(), 400);
    let mut sub = BrokerClient::connect(broker.addr)
        .unwrap()
        .subscribe("nothing-here")
        .unwrap();
    assert!(sub.recv_timeout(Duration::from_millis(300)).unwrap().is_none());
    broker.shutdown();
}
