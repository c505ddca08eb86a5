//! WebSocket transport: one thread and one [`Session`] per connection, with a
//! play ticker that runs between incoming messages.

use std::io::{self, ErrorKind};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use kinebasis::sim::SimConfig;
use kinebasis::BasisProvider;
use serde_json::Value;
use tungstenite::{Message, WebSocket};

use crate::session::{Session, PLAY_INTERVAL};

pub fn serve(listener: TcpListener, provider: Arc<BasisProvider>, config: SimConfig) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let provider = Arc::clone(&provider);
        let config = config.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, provider, config) {
                log::info!("session {peer:?} ended: {e}");
            }
        });
    }
    Ok(())
}

fn send_all(ws: &mut WebSocket<TcpStream>, replies: Vec<Value>) -> tungstenite::Result<()> {
    for reply in replies {
        ws.send(Message::Text(reply.to_string().into()))?;
    }
    Ok(())
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

pub fn handle_connection(stream: TcpStream, provider: Arc<BasisProvider>, config: SimConfig) -> tungstenite::Result<()> {
    stream.set_nodelay(true).ok();
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    let mut session = Session::new(provider, config);
    let mut next_tick = Instant::now();
    loop {
        let timeout = session.is_playing().then(|| {
            next_tick
                .saturating_duration_since(Instant::now())
                .max(std::time::Duration::from_millis(1))
        });
        ws.get_mut().set_read_timeout(timeout)?;
        match ws.read() {
            Ok(Message::Text(text)) => {
                let was_playing = session.is_playing();
                send_all(&mut ws, session.handle_text(text.as_str()))?;
                if session.is_playing() && !was_playing {
                    next_tick = Instant::now();
                }
            }
            Ok(Message::Binary(_)) => send_all(
                &mut ws,
                vec![serde_json::json!({"type": "error", "id": null, "message": "binary messages are not supported"})],
            )?,
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        if session.is_playing() && Instant::now() >= next_tick {
            next_tick += PLAY_INTERVAL;
            send_all(&mut ws, session.tick())?;
            if Instant::now() > next_tick {
                next_tick = Instant::now();
            }
        }
    }
}
