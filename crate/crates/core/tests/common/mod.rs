//! Scenario builders shared by the integration tests and the acceptance
//! harness. Every count in [`Truth`] is tallied while the scenario text is
//! written, never by running pipeline code.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::{Ipv4Addr, Ipv6Addr};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// IPv4 routes, `(base, len, asn)`. The /24 inside the /22 is a more
/// specific announcement by a different AS; it adds no address.
pub const V4_ROUTES: [(Ipv4Addr, u8, u32); 7] = [
    (Ipv4Addr::new(45, 0, 0, 0), 22, 64500),
    (Ipv4Addr::new(45, 0, 1, 0), 24, 64501),
    (Ipv4Addr::new(45, 1, 0, 0), 23, 64502),
    (Ipv4Addr::new(45, 2, 0, 0), 24, 64503),
    (Ipv4Addr::new(45, 3, 0, 0), 25, 64504),
    (Ipv4Addr::new(45, 4, 0, 0), 26, 64505),
    (Ipv4Addr::new(45, 5, 0, 0), 28, 64506),
];

pub const ASNS: [u32; 7] = [64500, 64501, 64502, 64503, 64504, 64505, 64506];
pub const COUNTRIES: [&str; 7] = ["DE", "DE", "NL", "FR", "US", "JP", "BR"];
pub const PORTS: [u16; 3] = [22, 80, 443];

/// Origin AS of a routed address, by the construction above.
pub fn v4_asn(a: Ipv4Addr) -> u32 {
    let o = a.octets();
    match (o[1], o[2]) {
        (0, 1) => 64501,
        (n, _) => 64500 + if n == 0 { 0 } else { u32::from(n) + 1 },
    }
}

/// One IPv6 /32 per AS: 2a00::/32 for 64500, 2a01::/32 for 64501, ...
pub fn v6_in(asn: u32, subnet: u16, iid: u64) -> Ipv6Addr {
    let hi = (0x2a00u128 + u128::from(asn - 64500)) << 112;
    Ipv6Addr::from(hi | (u128::from(subnet) << 64) | u128::from(iid))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PortTruth {
    pub accepted: u64,
    pub refused: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FamilyTruth {
    pub icmp_targets: u64,
    pub icmp_responsive: u64,
    pub ports: BTreeMap<u16, PortTruth>,
    pub tcp_without_icmp: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Truth {
    pub routed_v4: u64,
    /// Category name (as in the stats files) to count.
    pub ptr: BTreeMap<&'static str, u64>,
    pub ptr_names_logged: u64,
    pub distinct_names: u64,
    pub invalid_names: u64,
    pub aaaa: BTreeMap<&'static str, u64>,
    pub aaaa_answers: u64,
    pub a_candidates: u64,
    pub a_noerror: u64,
    pub classified: u64,
    pub buckets: BTreeMap<&'static str, u64>,
    pub slaac_routable: u64,
    pub zero_iid_routable: u64,
    pub embedded_matches: u64,
    pub pairs: Vec<(Ipv4Addr, Ipv6Addr, u32)>,
    pub probe_targets: u64,
    pub total: FamilyTruth,
    pub v4: FamilyTruth,
    pub v6: FamilyTruth,
}

pub struct MiniInternet {
    pub text: String,
    pub truth: Truth,
}

#[derive(Clone, Copy)]
enum Echo {
    All,
    ThirdOnly,
    Silent,
}

#[derive(Clone, Copy)]
enum Tcp {
    Accept,
    Refuse,
    Drop,
}

struct Behaviour {
    echo: Echo,
    tcp: [Tcp; 3],
}

fn tally(fam: &mut FamilyTruth, b: &Behaviour) {
    fam.icmp_targets += 1;
    let responsive = !matches!(b.echo, Echo::Silent);
    fam.icmp_responsive += u64::from(responsive);
    let mut evidence = false;
    for (port, t) in PORTS.iter().zip(b.tcp) {
        let p = fam.ports.entry(*port).or_default();
        match t {
            Tcp::Accept => {
                p.accepted += 1;
                evidence = true;
            }
            Tcp::Refuse => {
                p.refused += 1;
                evidence = true;
            }
            Tcp::Drop => p.dropped += 1,
        }
    }
    fam.tcp_without_icmp += u64::from(evidence && !responsive);
}

fn script(text: &mut String, addr: &str, b: &Behaviour) {
    match b.echo {
        Echo::All => writeln!(text, "echo {addr} all").unwrap(),
        Echo::ThirdOnly => writeln!(text, "echo {addr} --x").unwrap(),
        Echo::Silent => {}
    }
    for (port, t) in PORTS.iter().zip(b.tcp) {
        match t {
            Tcp::Accept => writeln!(text, "tcp {addr} {port} accept").unwrap(),
            Tcp::Refuse => writeln!(text, "tcp {addr} {port} refuse").unwrap(),
            Tcp::Drop => {}
        }
    }
}

/// 2,000 routed IPv4 addresses, 856 of them (42.8%) with a PTR name.
pub fn mini_internet(seed: u64) -> MiniInternet {
    let mut t = Truth::default();
    let mut text = format!("seed {seed}\nepoch 1456704000\n");
    for (base, len, asn) in V4_ROUTES {
        writeln!(text, "route {base}/{len} {asn}").unwrap();
    }
    for (i, asn) in ASNS.iter().enumerate() {
        writeln!(text, "route {}/32 {asn}", v6_in(*asn, 0, 0)).unwrap();
        writeln!(text, "country {asn} {}", COUNTRIES[i]).unwrap();
    }

    let mut addrs: Vec<Ipv4Addr> = Vec::new();
    for (base, len, _) in V4_ROUTES {
        if (base, len) == (Ipv4Addr::new(45, 0, 1, 0), 24) {
            continue;
        }
        let start = u32::from(base);
        addrs.extend((0..1u32 << (32 - len)).map(|i| Ipv4Addr::from(start + i)));
    }
    assert_eq!(addrs.len(), 2000);
    t.routed_v4 = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    addrs.shuffle(&mut rng);

    let (named, rest) = addrs.split_at(856);
    let mut rest = rest.iter();
    for (status, n, label) in [
        ("SERVFAIL", 200, "ServFail"),
        ("NODATA", 30, "NoData"),
        ("TIMEOUT", 10, "Timeout"),
        ("REFUSED", 4, "Other"),
    ] {
        for _ in 0..n {
            writeln!(text, "ptr {} {status}", rest.next().unwrap()).unwrap();
        }
        t.ptr.insert(label, n);
    }
    t.ptr.insert("NoError", 856);
    t.ptr.insert("NoDomain", rest.count() as u64);
    t.ptr_names_logged = 856;

    // 16 addresses with unusable names, 40 sharing 20 names, 800 unique.
    let mut names = named.iter();
    for (name, n) in [("localhost", 8), ("127.0.0.1", 4), ("45.0.0.9", 4)] {
        for _ in 0..n {
            writeln!(text, "ptr {} {name}", names.next().unwrap()).unwrap();
        }
    }
    t.invalid_names = 3;
    let mut shared = Vec::new();
    for j in 0..20 {
        let a = *names.next().unwrap();
        let b = *names.next().unwrap();
        writeln!(text, "ptr {a} s{j}.example\nptr {b} s{j}.example").unwrap();
        shared.push((format!("s{j}.example"), a, b));
    }
    let unique: Vec<(String, Ipv4Addr)> = names.enumerate().map(|(k, a)| (format!("h{k}.example"), *a)).collect();
    assert_eq!(unique.len(), 800);
    for (n, a) in &unique {
        writeln!(text, "ptr {a} {n}").unwrap();
    }
    t.distinct_names = 800 + 20 + 3;

    let mut aaaa_noerror = 0;
    let mut routable: Vec<Ipv6Addr> = Vec::new();
    let mut special = 0;
    let mut non_standard = 0;
    let mut unrouted = 0;
    let mut a_names = 0;
    let mut behaviours: Vec<(String, Behaviour, bool)> = Vec::new();

    // Pairable names: one AAAA in the source's AS and an A pointing back.
    for (k, (name, v4)) in unique.iter().take(20).enumerate() {
        let asn = v4_asn(*v4);
        let v6 = match k {
            0 => v6_in(asn, 1, u64::from(u32::from(*v4))),
            1 => v6_in(asn, 2, 0x0211_22ff_fe33_4455),
            2 => v6_in(asn, 2, 0x0a00_27ff_fe00_0001 | 0x0200_0000_0000_0000),
            3 => v6_in(asn, 3, 0),
            _ => v6_in(asn, 4, 0x100 + k as u64),
        };
        writeln!(text, "aaaa {name} {v6}\na {name} {v4}").unwrap();
        aaaa_noerror += 1;
        a_names += 1;
        routable.push(v6);
        t.pairs.push((*v4, v6, asn));
        let k4 = k % 4;
        let b4 = Behaviour {
            echo: if k4 != 3 { Echo::All } else { Echo::Silent },
            tcp: [
                Tcp::Drop,
                if k % 2 == 0 { Tcp::Accept } else { Tcp::Refuse },
                if k % 5 == 0 { Tcp::Accept } else { Tcp::Drop },
            ],
        };
        let b6 = Behaviour {
            echo: match k4 {
                0 => Echo::All,
                1 => Echo::ThirdOnly,
                _ => Echo::Silent,
            },
            tcp: [
                if k == 7 { Tcp::Refuse } else { Tcp::Drop },
                match k4 {
                    0 => Tcp::Accept,
                    1 => Tcp::Refuse,
                    _ => Tcp::Drop,
                },
                if k % 10 == 0 { Tcp::Accept } else { Tcp::Drop },
            ],
        };
        behaviours.push((v4.to_string(), b4, true));
        behaviours.push((v6.to_string(), b6, false));
    }
    t.slaac_routable = 2;
    t.zero_iid_routable = 1;
    t.embedded_matches = 1;

    // Two names per shared address, each with its own A record.
    for g in 0..2 {
        let (n1, v4a) = &unique[20 + 2 * g];
        let (n2, v4b) = &unique[21 + 2 * g];
        let v6 = v6_in(v4_asn(*v4a), 0xc, 1 + g as u64);
        writeln!(text, "aaaa {n1} {v6}\naaaa {n2} {v6}\na {n1} {v4a}\na {n2} {v4b}").unwrap();
        aaaa_noerror += 2;
        a_names += 2;
        routable.push(v6);
    }
    // AAAA in another AS than the source's A record.
    for k in 24..26 {
        let (n, v4) = &unique[k];
        let other = ASNS[(ASNS.iter().position(|a| *a == v4_asn(*v4)).unwrap() + 1) % ASNS.len()];
        let v6 = v6_in(other, 0xd, k as u64);
        writeln!(text, "aaaa {n} {v6}\na {n} {v4}").unwrap();
        aaaa_noerror += 1;
        a_names += 1;
        routable.push(v6);
    }
    // Two AAAA answers.
    for k in 26..28 {
        let (n, v4) = &unique[k];
        let x = v6_in(v4_asn(*v4), 0xe, 2 * k as u64);
        let y = v6_in(v4_asn(*v4), 0xe, 2 * k as u64 + 1);
        writeln!(text, "aaaa {n} {x} {y}\na {n} {v4}").unwrap();
        aaaa_noerror += 1;
        a_names += 1;
        routable.extend([x, y]);
    }
    // Not routable: documentation, unrouted global unicast, outside 2000::/3.
    writeln!(text, "aaaa {} 2001:db8::28", unique[28].0).unwrap();
    writeln!(text, "aaaa {} 2c0f:ffff::29", unique[29].0).unwrap();
    writeln!(text, "aaaa {} 4500::30", unique[30].0).unwrap();
    aaaa_noerror += 3;
    special += 1;
    unrouted += 1;
    non_standard += 1;
    // Any A record for these names must never be asked for.
    writeln!(text, "a {} 45.0.0.1", unique[28].0).unwrap();
    // Shared names resolve to both of their sources.
    for (n, a, b) in shared.iter().take(2) {
        let v6 = v6_in(v4_asn(*a), 0xf, u64::from(u32::from(*a)) << 8);
        writeln!(text, "aaaa {n} {v6}\na {n} {a} {b}").unwrap();
        aaaa_noerror += 1;
        a_names += 1;
        routable.push(v6);
    }
    writeln!(text, "aaaa localhost ::1").unwrap();
    aaaa_noerror += 1;
    special += 1;
    for (n, _) in &unique[31..41] {
        writeln!(text, "aaaa {n} NODATA").unwrap();
    }
    for (n, _) in &unique[41..46] {
        writeln!(text, "aaaa {n} SERVFAIL").unwrap();
    }

    t.aaaa.insert("NoError", aaaa_noerror);
    t.aaaa.insert("NoData", 10);
    t.aaaa.insert("ServFail", 5);
    t.aaaa.insert("Timeout", 0);
    t.aaaa.insert("Other", 0);
    t.aaaa.insert("NoDomain", t.distinct_names - aaaa_noerror - 15);
    t.aaaa_answers = aaaa_noerror + 2; // two names carry a second answer
    t.a_candidates = a_names;
    t.a_noerror = a_names;

    routable.sort();
    routable.dedup();
    t.classified = routable.len() as u64 + special + unrouted + non_standard;
    t.buckets.insert("routable", routable.len() as u64);
    t.buckets.insert("special", special);
    t.buckets.insert("unrouted-standard", unrouted);
    t.buckets.insert("non-standard", non_standard);

    // Unpaired routable addresses: the first three answer echo, one accepts on 80.
    let paired: Vec<Ipv6Addr> = t.pairs.iter().map(|p| p.1).collect();
    for (i, v6) in routable.iter().filter(|a| !paired.contains(a)).enumerate() {
        let b = Behaviour {
            echo: if i < 3 { Echo::All } else { Echo::Silent },
            tcp: [Tcp::Drop, if i == 0 { Tcp::Accept } else { Tcp::Drop }, Tcp::Drop],
        };
        behaviours.push((v6.to_string(), b, false));
    }
    for (addr, b, is_v4) in &behaviours {
        script(&mut text, addr, b);
        tally(&mut t.total, b);
        tally(if *is_v4 { &mut t.v4 } else { &mut t.v6 }, b);
    }
    t.probe_targets = behaviours.len() as u64;
    MiniInternet { text, truth: t }
}

/// Random zone over a few prefixes with every response status represented.
pub fn random_zone(seed: u64, prefixes: usize) -> String {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("route 2a00::/32 64500\n");
    for p in 0..prefixes {
        let base = Ipv4Addr::new(46, p as u8, 0, 0);
        let len = rng.random_range(22..=26u8);
        writeln!(text, "route {base}/{len} {}", 64500 + p).unwrap();
        for i in 0..1u32 << (32 - len) {
            let a = Ipv4Addr::from(u32::from(base) + i);
            let roll = rng.random_range(0..100);
            let name = format!("n{}.example", rng.random_range(0..400u32));
            match roll {
                0..=39 => writeln!(text, "ptr {a} {name}").unwrap(),
                40..=41 => writeln!(text, "ptr {a} +tc {name} alt-{name}").unwrap(),
                42..=47 => writeln!(text, "ptr {a} SERVFAIL").unwrap(),
                48..=50 => writeln!(text, "ptr {a} NODATA").unwrap(),
                51 => writeln!(text, "ptr {a} TIMEOUT").unwrap(),
                52 => writeln!(text, "ptr {a} REFUSED").unwrap(),
                _ => {}
            }
        }
    }
    for n in 0..400u32 {
        let name = format!("n{n}.example");
        match rng.random_range(0..10) {
            0 => writeln!(text, "aaaa {name} 2a00::{:x}", n + 1).unwrap(),
            1 => writeln!(text, "aaaa {name} 2a00::{:x} 2001:db8::{:x}", n + 1, n + 1).unwrap(),
            2 => writeln!(text, "aaaa {name} 2001:db8::{:x}", n + 1).unwrap(),
            3 => writeln!(text, "aaaa {name} SERVFAIL").unwrap(),
            4 => writeln!(text, "aaaa {name} TIMEOUT").unwrap(),
            _ => {}
        }
    }
    text
}
