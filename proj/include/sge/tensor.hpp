#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace sge {

// All dense math is double precision, stored row-major in a flat Eigen array.
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using Shape = std::vector<std::int64_t>;

std::int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode;

// Handle to a node of the computation graph. Copies share the node. Leaf
// nodes persist across steps (parameters); interior nodes are freed when the
// last handle to the graph's result goes out of scope.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor from_matrix(const RowMat& m, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  std::int64_t dim(int i) const;
  std::int64_t size() const;
  std::int64_t rows() const;  // 2D view: shape[0] (1 for 1D)
  std::int64_t cols() const;  // 2D view: shape[1] (size for 1D)

  double value() const;  // scalar tensors only
  const Eigen::ArrayXd& values() const;
  Eigen::ArrayXd& values_mut();  // in-place edit of a leaf (e.g. optimizer)
  ConstMatMap mat() const;       // rows() x cols() row-major view
  MatMap mat_mut();

  bool requires_grad() const;
  void set_requires_grad(bool v);  // leaves only
  bool has_grad() const;
  const Eigen::ArrayXd& grad() const;        // throws if absent
  Eigen::ArrayXd grad_or_zeros() const;      // absent == zero
  void zero_grad();

  TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}
  std::shared_ptr<TensorNode> node_;
  friend Tensor make_op_result(Shape, std::vector<Tensor>, bool);
};

struct TensorNode {
  Shape shape;
  Eigen::ArrayXd values;
  Eigen::ArrayXd grad;  // size 0 until backward touches this node
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Accumulates this node's grad into its parents' grads. Receives the node
  // itself; extra op data is captured by value.
  std::function<void(TensorNode&)> backprop;
};

// ---- kernel operations (all differentiable where meaningful) ----

Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T, [m,k]x[n,k]
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_rowvec(const Tensor& x, const Tensor& v); // [r,c] + [c]
Tensor scale(const Tensor& x, double s);
Tensor hadamard(const Tensor& a, const Tensor& b);   // same shape
Tensor sum_all(const Tensor& x);                     // -> scalar
Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor gelu(const Tensor& x);  // exact erf form
Tensor slice_cols(const Tensor& x, std::int64_t start, std::int64_t n);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor embed_rows(const Tensor& table, const std::vector<int>& ids);

// [d,h,w] feature map -> [(h*w), d] with rows in row-major spatial order.
Tensor spatial_to_rows(const Tensor& fmap);

// Bilinear sample of a [d,h,w] map at feature coordinates (x, y).
// (x, y) must lie in [0, w-1] x [0, h-1]; throws otherwise.
Tensor bilinear_sample(const Tensor& fmap, double x, double y);

// Mean of bilinear samples per point list: row i = mean over points[i].
// Coordinates must be pre-clamped to bounds. Empty point list -> error;
// empty outer vector -> [0,d] result.
Tensor pool_points(const Tensor& fmap,
                   const std::vector<std::vector<std::pair<double, double>>>& points);

// Mean NLL with next-token convention: for every position i with mask[i]
// set, scores log_probs[i-1, targets[i]]. Throws if no position is masked,
// if a masked position is 0, or if a masked target id is out of range.
Tensor masked_nll_next(const Tensor& log_probs, const std::vector<int>& targets,
                       const std::vector<std::uint8_t>& mask);

// Reverse sweep from a scalar loss; accumulates into .grad of every
// requires_grad node of the graph in a fixed topological order.
void backward(const Tensor& loss, double seed_grad = 1.0);

// ---- parameters ----

struct Parameter {
  std::string name;
  Tensor tensor;
  std::set<int> trainable_in_stage;  // subset of {1,2,3}
};

class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor t);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  std::vector<Parameter*> all();  // registration order
  std::vector<const Parameter*> all() const;
  std::size_t count() const { return params_.size(); }
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

std::uint64_t tensor_checksum(const Tensor& t);
std::uint64_t params_checksum(const ParamStore& store);

}  // namespace sge
