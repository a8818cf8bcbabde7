//! Byte-level protocol for external planners over a stream socket.
//!
//! Request: `"BVP1"`, ego speed (f64), raster (110592 bytes). Response:
//! `"BVT1"`, H (u32), then 2·H f64 values `x1, y1, …`. Everything is
//! little-endian; one request/response pair per tick on a persistent
//! connection.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{PolicyError, RasterPolicy};
use crate::birdview::{RasterImage, RASTER_BYTES};
use crate::trajectory::Trajectory;

pub const REQUEST_MAGIC: &[u8; 4] = b"BVP1";
pub const RESPONSE_MAGIC: &[u8; 4] = b"BVT1";
pub const REQUEST_BYTES: usize = 4 + 8 + RASTER_BYTES;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1);
/// Responses claiming more points than this are rejected unread.
const MAX_HORIZON: u32 = 4096;

pub fn encode_request(ego_speed: f64, raster: &RasterImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(REQUEST_BYTES);
    out.extend_from_slice(REQUEST_MAGIC);
    out.extend_from_slice(&ego_speed.to_le_bytes());
    out.extend_from_slice(raster.as_bytes());
    out
}

pub fn encode_response(traj: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 16 * traj.horizon());
    out.extend_from_slice(RESPONSE_MAGIC);
    out.extend_from_slice(&(traj.horizon() as u32).to_le_bytes());
    for v in traj.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn io_error(e: io::Error) -> PolicyError {
    match e.kind() {
        ErrorKind::WouldBlock | ErrorKind::TimedOut => PolicyError::Timeout,
        ErrorKind::UnexpectedEof => PolicyError::Malformed("connection closed mid-message".into()),
        _ => PolicyError::Io(e),
    }
}

/// Reads one request; `Ok(None)` on a clean end of stream.
pub fn read_request(r: &mut impl Read) -> Result<Option<(f64, RasterImage)>, PolicyError> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut magic[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(PolicyError::Malformed("truncated request".into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(io_error(e)),
        }
    }
    if &magic != REQUEST_MAGIC {
        return Err(PolicyError::Malformed(format!("bad request magic {magic:?}")));
    }
    let mut speed = [0u8; 8];
    r.read_exact(&mut speed).map_err(io_error)?;
    let mut raster = vec![0u8; RASTER_BYTES];
    r.read_exact(&mut raster).map_err(io_error)?;
    let raster = RasterImage::from_bytes(raster).expect("buffer has raster size");
    Ok(Some((f64::from_le_bytes(speed), raster)))
}

pub fn read_response(r: &mut impl Read) -> Result<Trajectory, PolicyError> {
    let mut head = [0u8; 8];
    r.read_exact(&mut head).map_err(io_error)?;
    if &head[..4] != RESPONSE_MAGIC {
        return Err(PolicyError::Malformed(format!("bad response magic {:?}", &head[..4])));
    }
    let h = u32::from_le_bytes(head[4..].try_into().expect("4 bytes"));
    if h == 0 || h > MAX_HORIZON {
        return Err(PolicyError::Malformed(format!("implausible horizon {h}")));
    }
    let mut body = vec![0u8; 16 * h as usize];
    r.read_exact(&mut body).map_err(io_error)?;
    let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Trajectory::from_flat(&flat).map_err(|e| PolicyError::Malformed(e.to_string()))
}

/// Client side: one persistent connection, one blocking exchange per plan.
#[derive(Debug)]
pub struct RemotePolicy {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    h: usize,
}

impl RemotePolicy {
    pub fn connect(addr: impl ToSocketAddrs, h: usize, timeout: Duration) -> Result<Self, PolicyError> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| PolicyError::Io(io::Error::new(ErrorKind::InvalidInput, "no address")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout).map_err(io_error)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { reader: BufReader::new(stream.try_clone()?), writer: BufWriter::new(stream), h })
    }
}

impl RasterPolicy for RemotePolicy {
    fn horizon(&self) -> usize {
        self.h
    }

    fn plan(&mut self, raster: &RasterImage, ego_speed: f64) -> Result<Trajectory, PolicyError> {
        self.writer.write_all(&encode_request(ego_speed, raster)).map_err(io_error)?;
        self.writer.flush().map_err(io_error)?;
        let t = read_response(&mut self.reader)?;
        if t.horizon() != self.h {
            return Err(PolicyError::Horizon { expected: self.h, got: t.horizon() });
        }
        Ok(t)
    }
}

/// Answers requests on one connection until the peer hangs up.
pub fn serve_connection(stream: TcpStream, policy: &mut dyn RasterPolicy) -> Result<(), PolicyError> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some((speed, raster)) = read_request(&mut reader)? {
        let t = policy.plan(&raster, speed)?;
        writer.write_all(&encode_response(&t))?;
        writer.flush()?;
    }
    Ok(())
}

/// Serves every incoming connection on its own thread with a fresh policy
/// from `make`. Runs until the listener fails.
pub fn serve<P, F>(listener: TcpListener, make: F) -> io::Result<()>
where
    P: RasterPolicy + Send + 'static,
    F: Fn() -> P + Send + Sync + 'static,
{
    let make = std::sync::Arc::new(make);
    for stream in listener.incoming() {
        let stream = stream?;
        let make = make.clone();
        thread::spawn(move || {
            let mut policy = make();
            // a misbehaving client only loses its own connection
            let _ = serve_connection(stream, &mut policy);
        });
    }
    Ok(())
}

/// Binds `addr` and serves in a background thread; returns the bound address.
pub fn spawn_server<P, F>(addr: impl ToSocketAddrs, make: F) -> io::Result<(SocketAddr, JoinHandle<io::Result<()>>)>
where
    P: RasterPolicy + Send + 'static,
    F: Fn() -> P + Send + Sync + 'static,
{
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    Ok((local, thread::spawn(move || serve(listener, make))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::policy::toy::{ToyPolicy, INPUT_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[derive(Clone)]
    struct Echo(Trajectory);

    impl RasterPolicy for Echo {
        fn horizon(&self) -> usize {
            self.0.horizon()
        }
        fn plan(&mut self, _: &RasterImage, _: f64) -> Result<Trajectory, PolicyError> {
            Ok(self.0.clone())
        }
    }

    fn fixed() -> Trajectory {
        Trajectory::new((1..=10).map(|k| Vec2::new(k as f64 * 0.5, -0.01 * k as f64)).collect()).unwrap()
    }

    #[test]
    fn request_layout() {
        let mut raster = RasterImage::default();
        raster.set(0, 0, [1, 2, 3]);
        let bytes = encode_request(2.5, &raster);
        assert_eq!(bytes.len(), REQUEST_BYTES);
        assert_eq!(&bytes[..4], b"BVP1");
        assert_eq!(&bytes[4..12], &2.5f64.to_le_bytes());
        assert_eq!(&bytes[12..15], &[1, 2, 3]);
        let (v, r) = read_request(&mut bytes.as_slice()).unwrap().unwrap();
        assert_eq!((v, r), (2.5, raster));
        assert!(read_request(&mut [].as_slice()).unwrap().is_none());
    }

    #[test]
    fn response_layout() {
        let t = Trajectory::from_flat(&[1.0, -2.0]).unwrap();
        let bytes = encode_response(&t);
        let mut expect = b"BVT1".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&1.0f64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(bytes, expect);
        assert_eq!(read_response(&mut bytes.as_slice()).unwrap(), t);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_response(&mut bad.as_slice()), Err(PolicyError::Malformed(_))));
        assert!(matches!(read_response(&mut &bytes[..10]), Err(PolicyError::Malformed(_))));
    }

    #[test]
    fn echo_server_round_trip() {
        let (addr, _) = spawn_server("127.0.0.1:0", || Echo(fixed())).unwrap();
        let mut client = RemotePolicy::connect(addr, 10, DEFAULT_TIMEOUT).unwrap();
        for _ in 0..3 {
            assert_eq!(client.plan(&RasterImage::default(), 1.0).unwrap(), fixed());
        }
        let mut wrong = RemotePolicy::connect(addr, 5, DEFAULT_TIMEOUT).unwrap();
        assert!(matches!(wrong.plan(&RasterImage::default(), 1.0), Err(PolicyError::Horizon { .. })));
    }

    #[test]
    fn closed_connection_is_an_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut buf = vec![0u8; REQUEST_BYTES];
            let _ = s.read_exact(&mut buf);
        });
        let mut client = RemotePolicy::connect(addr, 10, DEFAULT_TIMEOUT).unwrap();
        let err = client.plan(&RasterImage::default(), 1.0).unwrap_err();
        assert!(matches!(err, PolicyError::Malformed(_) | PolicyError::Io(_)), "{err:?}");
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let hold = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            thread::sleep(Duration::from_millis(600));
            drop(s);
        });
        let mut client = RemotePolicy::connect(addr, 10, Duration::from_millis(150)).unwrap();
        let err = client.plan(&RasterImage::default(), 1.0).unwrap_err();
        assert!(matches!(err, PolicyError::Timeout), "{err:?}");
        hold.join().unwrap();
    }

    #[test]
    fn loopback_matches_in_process_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let weights: Vec<f64> = (0..INPUT_DIM * 20).map(|_| rng.random_range(-0.05..0.05)).collect();
        let toy = ToyPolicy::new(10, weights).unwrap();
        let served = toy.clone();
        let (addr, _) = spawn_server("127.0.0.1:0", move || served.clone()).unwrap();
        let mut client = RemotePolicy::connect(addr, 10, DEFAULT_TIMEOUT).unwrap();
        let mut raster = RasterImage::default();
        for _ in 0..1000 {
            for _ in 0..50 {
                let (r, c) = (rng.random_range(0..192), rng.random_range(0..192));
                raster.set(r, c, [rng.random(), rng.random(), rng.random()]);
            }
            let v = rng.random_range(0.0..10.0);
            assert_eq!(client.plan(&raster, v).unwrap(), toy.predict(&raster, v));
        }
    }
}
