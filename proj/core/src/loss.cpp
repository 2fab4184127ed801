#include "augcl/loss.hpp"

#include "augcl/errors.hpp"

namespace augcl {

namespace {

template <typename T>
void check_pair(const Var<T>& za, const Var<T>& zb, const char* what) {
    if (za.value().rank() != 2 || za.shape() != zb.shape())
        throw DimensionError(std::string(what) + ": embeddings must be equal-shaped matrices, got " +
                             shape_string(za.shape()) + " and " + shape_string(zb.shape()));
    if (za.tape() != zb.tape()) throw ContractError(std::string(what) + ": inputs live on different tapes");
}

template <typename T>
Var<T> detach(Var<T> v) {
    return v.tape()->constant(v.value());
}

}  // namespace

template <std::floating_point T>
Tensor<T> standardize_columns(const Tensor<T>& z, T eps) {
    Tape<T> tape(GradMode::disabled);
    return standardize_columns(tape.constant(z), eps).value();
}

template <std::floating_point T>
Var<T> cross_correlation(Var<T> za, Var<T> zb, T eps) {
    check_pair(za, zb, "cross_correlation");
    const std::size_t n = za.dim(0);
    if (n < 2) throw BatchSizeError("cross_correlation needs at least 2 rows, got " + std::to_string(n));
    Var<T> a = standardize_columns(za, eps);
    Var<T> b = standardize_columns(zb, eps);
    return scale(matmul(transpose(a), b), T(1) / static_cast<T>(n));
}

template <std::floating_point T>
CorrelationMatrix<T> cross_correlation(const Tensor<T>& za, const Tensor<T>& zb, T eps) {
    Tape<T> tape(GradMode::disabled);
    Var<T> c = cross_correlation(tape.constant(za), tape.constant(zb), eps);
    return {c.value(), za.dim(0)};
}

template <std::floating_point T>
Var<T> barlow_twins_loss(Var<T> za, Var<T> zb, T lambda) {
    return barlow_objective(cross_correlation(za, zb), lambda);
}

template <std::floating_point T>
double barlow_twins_loss(const Tensor<T>& za, const Tensor<T>& zb, T lambda) {
    Tape<T> tape(GradMode::disabled);
    return static_cast<double>(barlow_twins_loss(tape.constant(za), tape.constant(zb), lambda).value().item());
}

template <std::floating_point T>
LossResult<T> ssl_loss(Var<T> za, Var<T> zb, T lambda) {
    Var<T> l = barlow_twins_loss(za, zb, lambda);
    LossBreakdown b;
    b.ssl_term = static_cast<double>(l.value().item());
    b.total = b.ssl_term;
    b.lambda = static_cast<double>(lambda);
    b.gamma = 0.0;
    return {l, b};
}

template <std::floating_point T>
LossResult<T> cassle_loss(Var<T> za, Var<T> zb, Var<T> zbar_a, Var<T> zbar_b, Predictor<T>& g, T lambda, T gamma,
                          Mode predictor_mode) {
    check_pair(za, zb, "cassle_loss");
    check_pair(za, zbar_a, "cassle_loss");
    check_pair(zb, zbar_b, "cassle_loss");
    if (g.width() != za.dim(1))
        throw DimensionError("cassle_loss: predictor width " + std::to_string(g.width()) +
                             " does not match embedding width " + std::to_string(za.dim(1)));

    Var<T> ssl = barlow_twins_loss(za, zb, lambda);
    Var<T> da = barlow_twins_loss(detach(zbar_a), g(*za.tape(), za, predictor_mode), lambda);
    Var<T> db = barlow_twins_loss(detach(zbar_b), g(*zb.tape(), zb, predictor_mode), lambda);
    Var<T> total = add(ssl, scale(add(da, db), gamma));

    LossBreakdown b;
    b.ssl_term = static_cast<double>(ssl.value().item());
    b.distill_a = static_cast<double>(da.value().item());
    b.distill_b = static_cast<double>(db.value().item());
    b.total = static_cast<double>(total.value().item());
    b.lambda = static_cast<double>(lambda);
    b.gamma = static_cast<double>(gamma);
    return {total, b};
}

#define AUGCL_INSTANTIATE_LOSS(T)                                                                              \
    template Tensor<T> standardize_columns<T>(const Tensor<T>&, T);                                            \
    template Var<T> cross_correlation<T>(Var<T>, Var<T>, T);                                                   \
    template CorrelationMatrix<T> cross_correlation<T>(const Tensor<T>&, const Tensor<T>&, T);                 \
    template Var<T> barlow_twins_loss<T>(Var<T>, Var<T>, T);                                                   \
    template double barlow_twins_loss<T>(const Tensor<T>&, const Tensor<T>&, T);                               \
    template LossResult<T> ssl_loss<T>(Var<T>, Var<T>, T);                                                     \
    template LossResult<T> cassle_loss<T>(Var<T>, Var<T>, Var<T>, Var<T>, Predictor<T>&, T, T, Mode);

AUGCL_INSTANTIATE_LOSS(float)
AUGCL_INSTANTIATE_LOSS(double)

}  // namespace augcl
