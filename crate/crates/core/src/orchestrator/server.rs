use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use super::protocol::MAX_LINE_BYTES;
use super::Orchestrator;

/// Accepts connections forever, one thread per connection.
pub fn serve(orchestrator: Arc<Orchestrator>, listener: TcpListener) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        };
        let o = Arc::clone(&orchestrator);
        thread::spawn(move || {
            // a broken connection only ends its own session
            let _ = session(&o, stream);
        });
    }
    Ok(())
}

fn session(o: &Orchestrator, stream: TcpStream) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::with_capacity(MAX_LINE_BYTES);
    loop {
        buf.clear();
        let n = (&mut reader)
            .take(MAX_LINE_BYTES as u64)
            .read_until(b'\n', &mut buf)?;
        if n == 0 {
            return Ok(());
        }
        let response = if buf.last() == Some(&b'\n') {
            buf.pop();
            o.handle_request(&buf)
        } else if n == MAX_LINE_BYTES {
            skip_line(&mut reader)?;
            o.handle_request(&buf)
        } else {
            // unterminated final line
            o.handle_request(&buf)
        };
        writer.write_all(response.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
}

fn skip_line(reader: &mut BufReader<TcpStream>) -> io::Result<()> {
    loop {
        let available = reader.fill_buf()?;
        if available.is_empty() {
            return Ok(());
        }
        if let Some(pos) = available.iter().position(|&b| b == b'\n') {
            reader.consume(pos + 1);
            return Ok(());
        }
        let len = available.len();
        reader.consume(len);
    }
}
