// Line-oriented snapshot format:
//   dims W L H seed
//   tick N
//   x y z block_id          (one per non-air voxel, storage order)
//   agent id x y z role inv (inv is `-` or `block_id:count,...`)

use std::collections::BTreeMap;
use std::fmt::Write;

use super::*;

pub(super) fn write(world: &WorldState) -> String {
    let d = world.dims;
    let mut out = String::new();
    writeln!(out, "dims {} {} {} {}", d.w, d.l, d.h, world.seed).unwrap();
    writeln!(out, "tick {}", world.tick).unwrap();
    for (p, b) in world.voxels() {
        if b != AIR {
            writeln!(out, "{} {} {} {}", p.x, p.y, p.z, b).unwrap();
        }
    }
    for a in &world.agents {
        let inv = if a.inventory.is_empty() {
            "-".to_string()
        } else {
            a.inventory.iter().map(|(b, n)| format!("{b}:{n}")).collect::<Vec<_>>().join(",")
        };
        let p = a.position;
        writeln!(out, "agent {} {} {} {} {} {}", a.agent_id, p.x, p.y, p.z, a.role.name(), inv).unwrap();
    }
    out
}

fn err(line: usize, msg: impl Into<String>) -> WorldError {
    WorldError::Parse { line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, WorldError> {
    s.parse().map_err(|_| err(line, format!("bad number {s:?}")))
}

pub(super) fn read(text: &str) -> Result<WorldState, WorldError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().ok_or_else(|| err(1, "empty snapshot"))?;
    let f: Vec<&str> = header.split_whitespace().collect();
    if f.len() != 5 || f[0] != "dims" {
        return Err(err(ln, "expected `dims W L H seed`"));
    }
    let dims = Dims::new(num(ln, f[1])?, num(ln, f[2])?, num(ln, f[3])?);
    if dims.w < 1 || dims.l < 1 || dims.h < 1 {
        return Err(err(ln, "dims must be positive"));
    }
    let mut world = WorldState::empty(dims, num(ln, f[4])?);
    for (ln, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.first().copied() {
            Some("tick") if f.len() == 2 => world.tick = num(ln, f[1])?,
            Some("agent") if f.len() == 7 => {
                let id: u32 = num(ln, f[1])?;
                let p = Pos::new(num(ln, f[2])?, num(ln, f[3])?, num(ln, f[4])?);
                let role = Role::from_name(f[5]).ok_or_else(|| err(ln, format!("unknown role {}", f[5])))?;
                let mut inventory = BTreeMap::new();
                if f[6] != "-" {
                    for item in f[6].split(',') {
                        let (b, n) = item.split_once(':').ok_or_else(|| err(ln, "bad inventory item"))?;
                        let b: BlockId = num(ln, b)?;
                        if !is_valid(b) {
                            return Err(err(ln, format!("invalid block id {b}")));
                        }
                        inventory.insert(b, num(ln, n)?);
                    }
                }
                world.add_agent(id, p, role).map_err(|e| err(ln, e.to_string()))?;
                world.agents.last_mut().expect("just added").inventory = inventory;
            }
            _ if f.len() == 4 => {
                let p = Pos::new(num(ln, f[0])?, num(ln, f[1])?, num(ln, f[2])?);
                let b: BlockId = num(ln, f[3])?;
                if !dims.contains(p) {
                    return Err(err(ln, format!("voxel {p} out of bounds")));
                }
                if !is_valid(b) {
                    return Err(err(ln, format!("invalid block id {b}")));
                }
                let i = (p.x + dims.w * (p.z + dims.l * p.y)) as usize;
                world.grid[i] = b;
            }
            _ => return Err(err(ln, format!("unrecognized line {line:?}"))),
        }
    }
    world.rebuild_audio();
    Ok(world)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut w = gen_world(11, &WorldConfig { agents: 3, ..WorldConfig::default() }).unwrap();
        w.give(1, STONE, 5).unwrap();
        w.step(0, &Action::Move(Dir::North)).unwrap();
        let text = w.to_snapshot();
        let back = WorldState::from_snapshot(&text).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.to_snapshot(), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = WorldState::from_snapshot("dims 4 4 4 0\n0 0 0 99\n").unwrap_err();
        assert_eq!(e, WorldError::Parse { line: 2, msg: "invalid block id 99".into() });
        assert!(WorldState::from_snapshot("").is_err());
        assert!(WorldState::from_snapshot("dims 4 4 4 0\n9 0 0 1\n").is_err());
    }
}
