#pragma once

#include "acp/common.hpp"
#include "acp/doc.hpp"
#include "acp/identity.hpp"
#include "acp/semantic.hpp"

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace acp {

inline constexpr std::size_t kBucketSize = 20;  // k
inline constexpr std::size_t kAlpha = 3;        // lookup concurrency
inline constexpr int kIdBits = 256;

using NodeId = Digest;

NodeId node_id_of(const Did& did);
NodeId distance(const NodeId& a, const NodeId& b);
/// Index of the most significant set bit, 255 for the top bit of byte 0;
/// -1 for the zero distance.
int msb_index(const NodeId& d);
/// Strict "a is closer to target than b".
bool closer(const NodeId& target, const NodeId& a, const NodeId& b);

/// Record keys: SHA-256 of a capability name, or of a rendered Did.
Digest capability_key(std::string_view capability);
Digest did_key(const Did& did);

struct Contact {
  NodeId id{};
  Did did;

  static Contact of(const Did& did) { return {node_id_of(did), did}; }
  friend bool operator==(const Contact& a, const Contact& b) { return a.did == b.did; }
};

struct PeerRecord {
  Contact contact;
  SimTime last_seen = 0;
};

class RoutingTable {
 public:
  enum class Insert { Added, Refreshed, Dropped, Evicted };

  explicit RoutingTable(Did owner, std::size_t k = kBucketSize);

  const Did& owner() const { return owner_; }
  const NodeId& owner_id() const { return owner_id_; }
  std::size_t capacity() const { return k_; }

  /// Kademlia insertion. A known peer is refreshed and moved to the tail.
  /// When the bucket is full the least recently seen peer is evicted only
  /// if is_down reports it unresponsive; otherwise the newcomer is dropped.
  /// Throws SelfInsert for the owner.
  Insert insert(const Did& peer, SimTime now, const std::function<bool(const Did&)>& is_down = {});
  bool remove(const Did& peer);
  bool contains(const Did& peer) const;

  /// Up to count contacts ordered by distance to target.
  std::vector<Contact> closest(const NodeId& target, std::size_t count) const;
  std::vector<Contact> all() const;
  std::size_t size() const;

  /// Bucket i holds peers whose distance to the owner has its MSB at i;
  /// oldest first.
  const std::vector<PeerRecord>& bucket(int i) const { return buckets_[static_cast<std::size_t>(i)]; }

 private:
  Did owner_;
  NodeId owner_id_;
  std::size_t k_;
  std::vector<std::vector<PeerRecord>> buckets_;
};

// ---------------------------------------------------------------------------
// signed records

struct DhtRecord {
  Digest key{};
  Doc card;  // AgentCard document
  PublicKey public_key{};
  SimTime stored_at = 0;
  Signature publisher_signature{};

  Doc unsigned_doc() const;
  Doc to_doc() const;
  static DhtRecord from_doc(const Doc& d);
  Did publisher() const { return did_from_public_key(public_key); }
};

DhtRecord make_record(const KeyPair& publisher, const AgentCard& card, const Digest& key, SimTime stored_at);
/// Every check a registry node applies before storing or returning a record:
/// card validity, key/Did binding, key derived from the card, signature.
/// Throws RecordRejected naming the failed check.
AgentCard verify_record(const DhtRecord& rec);
bool record_valid(const DhtRecord& rec);

/// Records held by one node, one per (key, publisher); a higher stored_at
/// replaces an older record.
class RecordStore {
 public:
  /// Returns true if the record was stored or replaced an older one.
  bool put(const DhtRecord& rec);
  std::vector<DhtRecord> get(const Digest& key) const;
  bool has(const Digest& key) const { return records_.count(key) != 0; }
  std::size_t size() const;

 private:
  std::map<Digest, std::map<std::string, DhtRecord>> records_;
};

// ---------------------------------------------------------------------------
// iterative lookup

/// Transport-independent lookup state. Rounds are synchronous: every query
/// of a round is answered or failed before the next round is issued, and
/// the number of rounds is the hop count.
class Lookup {
 public:
  Lookup(NodeId target, const std::vector<Contact>& seeds, bool want_value, const Did& self,
         std::size_t k = kBucketSize, std::size_t alpha = kAlpha);

  /// Contacts to query in the next round; empty once finished.
  std::vector<Contact> next_round();
  void on_reply(const Did& from, const std::vector<Contact>& peers, const std::vector<DhtRecord>& records);
  void on_failure(const Did& from);

  bool round_pending() const { return !in_flight_.empty(); }
  std::vector<Did> pending() const;
  bool finished() const;
  std::size_t rounds() const { return rounds_; }
  std::size_t responded() const { return responded_count_; }
  std::size_t failed() const { return failed_count_; }
  const NodeId& target() const { return target_; }
  bool want_value() const { return want_value_; }

  /// k closest contacts that answered.
  std::vector<Contact> closest() const;
  const std::vector<DhtRecord>& records() const { return records_; }

 private:
  enum class Mark { Fresh, InFlight, Answered, Failed };
  struct Entry {
    Contact contact;
    Mark mark = Mark::Fresh;
  };

  void learn(const Contact& c);
  std::vector<Entry*> candidates(std::size_t n);
  void close_round_if_done();

  NodeId target_;
  Did self_;
  bool want_value_;
  std::size_t k_;
  std::size_t alpha_;
  std::map<NodeId, Entry> shortlist_;  // keyed by distance to target
  std::set<std::string> in_flight_;
  std::optional<NodeId> best_before_round_;
  bool final_sweep_ = false;
  bool done_ = false;
  std::size_t rounds_ = 0;
  std::size_t responded_count_ = 0;
  std::size_t failed_count_ = 0;
  std::vector<DhtRecord> records_;
  std::set<std::string> record_ids_;
};

// ---------------------------------------------------------------------------
// in-process network driving the same lookup state

struct FindResult {
  std::vector<DhtRecord> records;
  std::vector<Contact> closest;
  std::size_t hops = 0;
};

struct DhtNode {
  Did did;
  NodeId id{};
  PublicKey public_key{};
  RoutingTable table;
  RecordStore store;
  bool down = false;

  DhtNode(Did d, const PublicKey& pk) : did(d), id(node_id_of(d)), public_key(pk), table(d) {}
};

/// Direct-call DHT used by tests, benchmarks and the sweep. The simulated
/// network drives the same Lookup over real envelopes.
class DhtNetwork {
 public:
  std::size_t add_node(const Did& did, const PublicKey& pk);
  /// Bootstraps node idx through node via, then looks up its own id so
  /// that both it and the nodes it contacts learn about each other.
  void join(std::size_t idx, std::size_t via, SimTime now = 0);

  std::size_t size() const { return nodes_.size(); }
  DhtNode& node(std::size_t idx) { return nodes_.at(idx); }
  const DhtNode& node(std::size_t idx) const { return nodes_.at(idx); }
  std::optional<std::size_t> index_of(const Did& did) const;
  void set_down(std::size_t idx, bool down) { nodes_.at(idx).down = down; }

  /// Read-only lookup, safe to run concurrently with other finds.
  /// Throws DiscoveryUnavailable when every contacted peer failed.
  FindResult iterative_find(std::size_t start, const Digest& key, bool want_value = true) const;

  /// Stores the record on the k nodes closest to its key (the publisher
  /// included when it is among them). Throws RecordRejected if no node
  /// accepts it.
  std::vector<Did> publish(std::size_t publisher, const DhtRecord& rec);
  std::vector<Did> publish_card(std::size_t publisher, const KeyPair& kp, const AgentCard& card, SimTime now);
  std::vector<AgentCard> lookup_capability(std::size_t start, std::string_view capability) const;

  /// What node idx answers to a DHT_FIND.
  std::pair<std::vector<Contact>, std::vector<DhtRecord>> answer_find(std::size_t idx, const Digest& key,
                                                                      bool want_value) const;

 private:
  FindResult run_lookup(std::size_t start, const Digest& key, bool want_value,
                        const std::function<void(std::size_t, std::size_t)>& on_contact) const;

  std::vector<DhtNode> nodes_;
  std::map<std::string, std::size_t> index_;
};

/// Cards of one capability out of a record set, deduplicated per publisher
/// (newest wins) and sorted by Did.
std::vector<AgentCard> cards_for_capability(const std::vector<DhtRecord>& records, std::string_view capability);

// ---------------------------------------------------------------------------
// local broadcast

/// Segmented LAN bus. Announcements are signed records keyed by the
/// announcer's Did.
class LocalBus {
 public:
  void attach(const Did& agent, const std::string& segment);
  std::optional<std::string> segment_of(const Did& agent) const;

  void announce(const DhtRecord& announcement, SimTime at);
  void announce(const KeyPair& kp, const AgentCard& card, SimTime at);
  /// Unchecked injection, as an attacker on the segment would do.
  void inject(const std::string& segment, const DhtRecord& announcement, SimTime at);

  /// Cards heard on the asker's segment up to at + timeout that advertise
  /// the capability and pass verification. The asker's own card is omitted.
  std::vector<AgentCard> query(const Did& asker, std::string_view capability, SimTime at, SimTime timeout) const;

 private:
  struct Heard {
    DhtRecord record;
    SimTime at;
  };
  std::map<std::string, std::string> segment_of_;
  std::map<std::string, std::vector<Heard>> heard_;
};

}  // namespace acp
