// Block vocabulary. Ids are dense and stable: they appear in snapshots,
// occupancy files and policy feature names, so never reorder this table.

pub type BlockId = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioEmitter {
    pub event: &'static str,
    pub range: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockType {
    pub id: BlockId,
    pub name: &'static str,
    pub solid: bool,
    pub mineable: bool,
    pub audio: Option<AudioEmitter>,
}

/// Default audio range in blocks; vision reaches only `VIEW_RADIUS`.
pub const AUDIO_RANGE: u32 = 12;

const fn solid(id: BlockId, name: &'static str) -> BlockType {
    BlockType { id, name, solid: true, mineable: true, audio: None }
}

const fn emitter(id: BlockId, name: &'static str, event: &'static str) -> BlockType {
    BlockType {
        id,
        name,
        solid: true,
        mineable: true,
        audio: Some(AudioEmitter { event, range: AUDIO_RANGE }),
    }
}

pub const AIR: BlockId = 0;
pub const BEDROCK: BlockId = 1;
pub const STONE: BlockId = 2;
pub const DIRT: BlockId = 3;
pub const GRASS: BlockId = 4;
pub const SAND: BlockId = 5;
pub const WOOD: BlockId = 6;
pub const LEAVES: BlockId = 7;
pub const COAL_ORE: BlockId = 8;
pub const IRON_ORE: BlockId = 9;
pub const DIAMOND: BlockId = 10;
pub const SANDSTONE: BlockId = 11;
pub const PLANKS: BlockId = 12;
pub const BRICK: BlockId = 13;
pub const COBBLESTONE: BlockId = 14;
pub const GLASS: BlockId = 15;
pub const JUKEBOX: BlockId = 16;
pub const BELL: BlockId = 17;
pub const BEEHIVE: BlockId = 18;

pub static BLOCKS: [BlockType; 19] = [
    BlockType { id: AIR, name: "air", solid: false, mineable: false, audio: None },
    BlockType { id: BEDROCK, name: "bedrock", solid: true, mineable: false, audio: None },
    solid(STONE, "stone"),
    solid(DIRT, "dirt"),
    solid(GRASS, "grass"),
    solid(SAND, "sand"),
    solid(WOOD, "wood"),
    solid(LEAVES, "leaves"),
    solid(COAL_ORE, "coal_ore"),
    solid(IRON_ORE, "iron_ore"),
    solid(DIAMOND, "diamond"),
    solid(SANDSTONE, "sandstone"),
    solid(PLANKS, "planks"),
    solid(BRICK, "brick"),
    solid(COBBLESTONE, "cobblestone"),
    solid(GLASS, "glass"),
    emitter(JUKEBOX, "jukebox", "music"),
    emitter(BELL, "bell", "chime"),
    emitter(BEEHIVE, "beehive", "buzz"),
];

/// Number of block types (B).
pub const NUM_BLOCKS: usize = BLOCKS.len();

/// Materials handed out in building kits.
pub const BUILDING_MATERIALS: [BlockId; 7] =
    [STONE, WOOD, SANDSTONE, PLANKS, BRICK, COBBLESTONE, GLASS];

pub fn block(id: BlockId) -> &'static BlockType {
    &BLOCKS[id as usize]
}

pub fn is_valid(id: BlockId) -> bool {
    (id as usize) < NUM_BLOCKS
}

pub fn block_by_name(name: &str) -> Option<&'static BlockType> {
    BLOCKS.iter().find(|b| b.name == name)
}

pub fn name(id: BlockId) -> &'static str {
    block(id).name
}

pub fn is_solid(id: BlockId) -> bool {
    block(id).solid
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn ids_are_dense_and_names_unique() {
        for (i, b) in BLOCKS.iter().enumerate() {
            assert_eq!(b.id as usize, i);
        }
        let names: BTreeSet<_> = BLOCKS.iter().map(|b| b.name).collect();
        assert_eq!(names.len(), NUM_BLOCKS);
        assert!(!block(AIR).solid && !block(AIR).mineable);
        assert!(!block(BEDROCK).mineable);
    }
}
