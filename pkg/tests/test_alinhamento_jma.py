import math

import numpy as np
import pytest
import torch

from src.alinhamento_jma import (ClassifierHead, ConfigOtimizador, EstadoTreino, JointFeature,
                                 LoteAlinhamento, LossWeights, ModeloJM3D, PerdaNaoFinitaError,
                                 contrastive_loss, embeddings_nuvens, joint_feature,
                                 joint_feature_lote, parent_classification_loss, preparar_lote,
                                 state_checksum, total_loss, train_step)
from src.codificadores import Embedding
from src.smo_dados import (CorpusSpec, assemble_triplets, build_category_tree,
                           generate_synthetic_corpus, pares_do_corpus, profundidade_maxima,
                           renderizar_corpus)


# ====================== FEATURE CONJUNTA ======================

def test_joint_feature_uma_vista():
    """V = 1: peso [1] e h^J igual à linha da vista."""
    vista = torch.tensor([[0.3, -1.2, 2.0]], dtype=torch.float64)
    jf = joint_feature(vista, torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64))
    assert jf.weights.tolist() == [1.0]
    assert torch.max(torch.abs(jf.vec - vista[0])) <= 1e-9


def test_joint_feature_vistas_iguais():
    linha = torch.tensor([1.0, 2.0, -0.5], dtype=torch.float64)
    jf = joint_feature(linha.repeat(4, 1), torch.tensor([0.2, 0.1, 0.9], dtype=torch.float64))
    assert torch.allclose(jf.weights, torch.full((4,), 0.25, dtype=torch.float64))
    assert torch.allclose(jf.vec, linha)


def test_joint_feature_logits_conhecidos():
    """Logits (0, ln 3) dão pesos (0.25, 0.75) e h^J = 0.25 v1 + 0.75 v2."""
    ln3 = math.log(3.0)
    v1 = torch.tensor([2.0, 0.0], dtype=torch.float64)
    v2 = torch.tensor([0.0, 5.0], dtype=torch.float64)
    texto = torch.tensor([0.0, ln3], dtype=torch.float64)
    jf = joint_feature(torch.stack([v1, v2]), texto)
    assert jf.weights[0].item() == pytest.approx(0.25, abs=1e-9)
    assert jf.weights[1].item() == pytest.approx(0.75, abs=1e-9)
    assert torch.allclose(jf.vec, 0.25 * v1 + 0.75 * v2, atol=1e-12)
    assert torch.allclose(jf.recompor(torch.stack([v1, v2])), jf.vec)


def test_joint_feature_aceita_embedding():
    vistas = torch.eye(3, dtype=torch.float64)
    jf = joint_feature(vistas, Embedding(np.array([0.0, 0.0, 1.0])))
    assert int(jf.weights.argmax()) == 2


def test_joint_feature_dimensoes():
    with pytest.raises(ValueError, match="Dimensões incompatíveis"):
        joint_feature(torch.zeros(2, 3), torch.zeros(4))


def test_joint_feature_pesos_somam_um():
    """1000 sorteios com V <= 8: pesos somam 1 e h^J fica na envoltória das vistas."""
    rng = torch.Generator().manual_seed(0)
    violacoes = 0
    for i in range(1000):
        V = 1 + i % 8
        vistas = torch.randn(V, 6, generator=rng, dtype=torch.float64) * 3
        texto = torch.randn(6, generator=rng, dtype=torch.float64)
        jf = joint_feature(vistas, texto)
        assert abs(float(jf.weights.sum()) - 1.0) <= 1e-6
        acima = jf.vec > vistas.max(dim=0).values + 1e-12
        abaixo = jf.vec < vistas.min(dim=0).values - 1e-12
        violacoes += int(acima.any() or abaixo.any())
    assert violacoes == 0


def test_joint_feature_texto_ortogonal():
    """Somar ao texto um vetor ortogonal a todas as vistas não muda os pesos (<= 1e-6)."""
    torch.manual_seed(4)
    vistas = torch.zeros(3, 6, dtype=torch.float64)
    vistas[:, :3] = torch.randn(3, 3, dtype=torch.float64)
    texto = torch.randn(6, dtype=torch.float64)
    ortogonal = torch.tensor([0.0, 0.0, 0.0, 2.5, -1.0, 4.0], dtype=torch.float64)
    assert torch.max(torch.abs(vistas @ ortogonal)) == 0.0
    base = joint_feature(vistas, texto).weights
    deslocado = joint_feature(vistas, texto + ortogonal).weights
    assert torch.max(torch.abs(base - deslocado)) <= 1e-6


def test_joint_feature_lote_confere_individual():
    torch.manual_seed(0)
    vistas, texto = torch.randn(3, 4, 5, dtype=torch.float64), torch.randn(3, 5, dtype=torch.float64)
    h, pesos = joint_feature_lote(vistas, texto)
    for b in range(3):
        jf = joint_feature(vistas[b], texto[b])
        assert torch.allclose(h[b], jf.vec)
        assert torch.allclose(pesos[b], jf.weights)


def test_joint_feature_pesos_invalidos():
    with pytest.raises(ValueError, match="somar 1"):
        JointFeature(vec=torch.zeros(2), weights=torch.tensor([0.5, 0.6]))


def test_joint_feature_gradcheck():
    """h^J diferenciável em relação às vistas e ao texto (double)."""
    torch.manual_seed(0)
    vistas = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    texto = torch.randn(4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda v, t: joint_feature(v, t).vec, (vistas, texto),
                                    eps=1e-6, atol=1e-6, rtol=1e-4)


# ====================== PERDAS ======================

def test_contrastiva_identidade():
    """A = B = identidade 2x2, τ = 1: L = -log(e / (e + 1)) ≈ 0.31326."""
    eye = torch.eye(2, dtype=torch.float64)
    perda = contrastive_loss(eye, eye, 1.0)
    assert perda.item() == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-9)
    assert perda.item() == pytest.approx(0.31326, abs=1e-5)


def test_contrastiva_linhas_iguais():
    """Todas as linhas iguais: logits uniformes e L = ln 2."""
    A = torch.ones(2, 3, dtype=torch.float64)
    assert contrastive_loss(A, A, 1.0).item() == pytest.approx(math.log(2), abs=1e-9)


def test_contrastiva_simetrica():
    torch.manual_seed(1)
    A, B = torch.randn(5, 4, dtype=torch.float64), torch.randn(5, 4, dtype=torch.float64)
    assert contrastive_loss(A, B, 0.07).item() == pytest.approx(contrastive_loss(B, A, 0.07).item())


def test_contrastiva_permutacao_do_lote():
    """A mesma permutação em A e B mantém L (<= 1e-6)."""
    torch.manual_seed(3)
    A, B = torch.randn(6, 4, dtype=torch.float64), torch.randn(6, 4, dtype=torch.float64)
    base = contrastive_loss(A, B, 0.07).item()
    for _ in range(5):
        ordem = torch.randperm(6)
        assert abs(contrastive_loss(A[ordem], B[ordem], 0.07).item() - base) <= 1e-6


def test_temperatura_preserva_argmax():
    """Escalar τ muda os valores do softmax, não o argmax de cada linha."""
    torch.manual_seed(5)
    A, B = torch.randn(8, 4, dtype=torch.float64), torch.randn(8, 4, dtype=torch.float64)
    similaridades = (A / A.norm(dim=1, keepdim=True)) @ (B / B.norm(dim=1, keepdim=True)).T
    referencia = torch.argmax(torch.softmax(similaridades / 0.07, dim=1), dim=1)
    for tau in (0.01, 0.5, 1.0, 10.0):
        probs = torch.softmax(similaridades / tau, dim=1)
        assert torch.equal(torch.argmax(probs, dim=1), referencia)
    assert contrastive_loss(A, B, 0.07).item() != pytest.approx(contrastive_loss(A, B, 10.0).item())


def test_contrastiva_exige_negativos():
    with pytest.raises(ValueError, match="N >= 2"):
        contrastive_loss(torch.ones(1, 3), torch.ones(1, 3), 0.07)
    with pytest.raises(ValueError, match="formas diferentes"):
        contrastive_loss(torch.ones(2, 3), torch.ones(3, 3), 0.07)


def test_contrastiva_gradcheck():
    torch.manual_seed(2)
    A = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    B = torch.randn(3, 4, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda a, b: contrastive_loss(a, b, 0.5), (A, B),
                                    eps=1e-6, atol=1e-6, rtol=1e-4)


def _cabeca_com_logits(logits: torch.Tensor) -> ClassifierHead:
    """Cabeça cuja saída é exatamente o vetor de logits dado, para qualquer entrada"""
    head = ClassifierHead(dim=2, n_pais=logits.shape[0]).double()
    with torch.no_grad():
        for p in head.parameters():
            p.zero_()
        head.camadas[2].bias.copy_(logits)
    return head


def test_classificacao_margem_grande():
    logits = torch.zeros(6, dtype=torch.float64)
    logits[3] = 100.0
    perda = parent_classification_loss(_cabeca_com_logits(logits), torch.ones(4, 2, dtype=torch.float64),
                                       torch.full((4,), 3))
    assert perda.item() < 1e-6


def test_classificacao_uniforme():
    """Logits uniformes sobre 6 pais: perda ln 6 ≈ 1.7918."""
    head = _cabeca_com_logits(torch.zeros(6, dtype=torch.float64))
    perda = parent_classification_loss(head, torch.ones(3, 2, dtype=torch.float64),
                                       torch.tensor([0, 2, 5]))
    assert perda.item() == pytest.approx(math.log(6), abs=1e-9)


def test_classificacao_codigo_fora():
    head = ClassifierHead(dim=2, n_pais=3)
    with pytest.raises(ValueError, match="fora de"):
        parent_classification_loss(head, torch.zeros(2, 2), torch.tensor([0, 3]))


def test_classificador_gradcheck():
    torch.manual_seed(3)
    head = ClassifierHead(dim=4, n_pais=3, largura=5).double()
    h = torch.randn(4, 4, dtype=torch.float64, requires_grad=True)
    codigos = torch.tensor([0, 1, 2, 1])
    assert torch.autograd.gradcheck(lambda x: parent_classification_loss(head, x, codigos), (h,),
                                    eps=1e-6, atol=1e-6, rtol=1e-4)


def _lote_aleatorio(B=4, V=2, D=6, seed=0) -> LoteAlinhamento:
    g = torch.Generator().manual_seed(seed)
    return LoteAlinhamento(h_C=torch.randn(B, D, generator=g, dtype=torch.float64),
                           vistas=torch.randn(B, V, D, generator=g, dtype=torch.float64),
                           h_T=torch.randn(B, D, generator=g, dtype=torch.float64),
                           codigos_pai=torch.tensor([0, 1, 0, 1][:B]))


def test_total_so_classificacao():
    """λ1 = λ2 = λ3 = 0: total igual à perda de classificação."""
    lote = _lote_aleatorio()
    head = ClassifierHead(dim=6, n_pais=2).double()
    total, termos = total_loss(lote, head, LossWeights(0.0, 0.0, 0.0))
    esperado = parent_classification_loss(head, lote.h_C, lote.codigos_pai)
    assert total.item() == pytest.approx(esperado.item(), abs=1e-12)
    assert termos["total"] == pytest.approx(termos["classificacao_pai"])


def test_total_soma_ponderada():
    lote = _lote_aleatorio(seed=4)
    head = ClassifierHead(dim=6, n_pais=2).double()
    lw = LossWeights(0.5, 2.0, 1.5, temperature=0.2, lambda_cls=0.3)
    total, t = total_loss(lote, head, lw)
    soma = 0.5 * t["contraste_nuvem_juncao"] + 2.0 * t["contraste_nuvem_texto"] \
        + 1.5 * t["contraste_texto_juncao"] + 0.3 * t["classificacao_pai"]
    assert total.item() == pytest.approx(soma, rel=1e-12)


def test_total_modo_independente():
    """Ablação independente: sem termo texto-junção e vistas pela média."""
    lote = _lote_aleatorio(seed=5)
    head = ClassifierHead(dim=6, n_pais=2).double()
    _, t = total_loss(lote, head, LossWeights(temperature=0.5), modo="independente")
    assert t["contraste_texto_juncao"] == 0.0
    esperado = contrastive_loss(lote.h_C, lote.vistas.mean(dim=1), 0.5).item()
    assert t["contraste_nuvem_juncao"] == pytest.approx(esperado)
    with pytest.raises(ValueError, match="Modo de alinhamento"):
        total_loss(lote, head, LossWeights(), modo="outro")


def test_total_texto_congelado():
    """O texto não recebe gradiente (codificador de texto congelado)."""
    lote = _lote_aleatorio(seed=6)
    lote.h_T.requires_grad_(True)
    lote.h_C.requires_grad_(True)
    total, _ = total_loss(lote, ClassifierHead(dim=6, n_pais=2).double(), LossWeights())
    total.backward()
    assert lote.h_T.grad is None
    assert lote.h_C.grad is not None


def test_total_loss_gradcheck():
    """Objetivo completo diferenciável em h_C e nas vistas fundidas (double)."""
    lote = _lote_aleatorio(B=3, V=2, D=4, seed=7)
    head = ClassifierHead(dim=4, n_pais=2, largura=3).double()
    lw = LossWeights(temperature=0.5)
    codigos = torch.tensor([0, 1, 1])

    def f(h_C, vistas):
        return total_loss(LoteAlinhamento(h_C, vistas, lote.h_T, codigos), head, lw)[0]

    entradas = (lote.h_C.clone().requires_grad_(True), lote.vistas.clone().requires_grad_(True))
    assert torch.autograd.gradcheck(f, entradas, eps=1e-6, atol=1e-6, rtol=1e-4)


def test_loss_weights_validacao():
    with pytest.raises(ValueError, match="Temperatura"):
        LossWeights(temperature=0.0)
    with pytest.raises(ValueError, match="lambda2"):
        LossWeights(lambda2=-1.0)


# ====================== PASSO DE TREINO ======================

@pytest.fixture(scope="module")
def dados_treino():
    corpus = generate_synthetic_corpus(CorpusSpec(2, 2, 3, 32, seed=0))
    tree = build_category_tree(pares_do_corpus(corpus))
    candidatos = renderizar_corpus(corpus, 16, 16)
    return corpus, tree, candidatos, profundidade_maxima(candidatos.values())


def _lote(dados, enc_imagem, enc_texto, seed=0):
    corpus, tree, candidatos, max_depth = dados
    triplas = assemble_triplets(corpus, tree, 2, 60.0, seed, candidatos=candidatos)
    return preparar_lote(triplas, tree, enc_imagem, enc_texto, max_depth)


def _estado(dados, lr=1e-2, seed=0, passos=10):
    torch.manual_seed(seed)
    modelo = ModeloJM3D(dim=8, n_pais=2, max_depth=dados[3], largura_ponto=(16, 32), largura_cabeca=16)
    return EstadoTreino(modelo, ConfigOtimizador(lr=lr, total_passos=passos), seed=seed)


def test_preparar_lote(dados_treino, enc_imagem, enc_texto):
    lote = _lote(dados_treino, enc_imagem, enc_texto)
    assert len(lote) == 12
    assert lote.pontos.shape == (12, 32, 3)
    assert lote.vistas_brutas.shape == (12, 2, 8)
    assert lote.texto_sub.shape == (12, 8)
    assert lote.codigos_pai.tolist() == [0] * 6 + [1] * 6
    assert lote.pontos.dtype == torch.float32


def test_lr_zero_estado_inalterado(dados_treino, enc_imagem, enc_texto):
    """Taxa de aprendizado zero deixa os parâmetros idênticos bit a bit."""
    estado = _estado(dados_treino, lr=0.0)
    antes = state_checksum(estado.modelo)
    train_step(estado, _lote(dados_treino, enc_imagem, enc_texto), LossWeights())
    assert state_checksum(estado.modelo) == antes
    assert estado.passo == 1


def test_trajetoria_reprodutivel(dados_treino, enc_imagem, enc_texto):
    """Mesma semente e mesmos dados: perdas idênticas (<= 1e-6) em 10 passos."""
    lote = _lote(dados_treino, enc_imagem, enc_texto)

    def trajetoria():
        estado = _estado(dados_treino)
        return [train_step(estado, lote, LossWeights())["total"] for _ in range(10)]

    a, b = trajetoria(), trajetoria()
    assert np.max(np.abs(np.array(a) - np.array(b))) <= 1e-6


def test_perda_diminui(dados_treino, enc_imagem, enc_texto):
    """50 passos no mesmo lote: perda final abaixo da inicial."""
    lote = _lote(dados_treino, enc_imagem, enc_texto)
    estado = _estado(dados_treino, lr=5e-3, passos=50)
    perdas = [train_step(estado, lote, LossWeights())["total"] for _ in range(50)]
    assert perdas[-1] < perdas[0]
    assert np.mean(perdas[-5:]) < np.mean(perdas[:5])


def test_agenda_cosseno(dados_treino, enc_imagem, enc_texto):
    lote = _lote(dados_treino, enc_imagem, enc_texto)
    estado = _estado(dados_treino, lr=1e-2, passos=4)
    taxas = [train_step(estado, lote, LossWeights())["lr"] for _ in range(4)]
    assert taxas[0] == pytest.approx(1e-2)
    assert taxas == sorted(taxas, reverse=True)
    assert estado.lr_atual == pytest.approx(0.0, abs=1e-12)


def test_perda_nao_finita(dados_treino, enc_imagem, enc_texto):
    """Perda NaN interrompe o passo sem alterar parâmetros."""
    lote = _lote(dados_treino, enc_imagem, enc_texto)
    lote.pontos[0, 0, 0] = float("nan")
    estado = _estado(dados_treino)
    antes = state_checksum(estado.modelo)
    with pytest.raises(PerdaNaoFinitaError, match="não finita"):
        train_step(estado, lote, LossWeights())
    assert state_checksum(estado.modelo) == antes
    assert estado.passo == 0


def test_estado_serializa_e_retoma(dados_treino, enc_imagem, enc_texto):
    """Estado restaurado de tensores + metadados continua igual ao original."""
    lote = _lote(dados_treino, enc_imagem, enc_texto)
    original = _estado(dados_treino)
    for _ in range(3):
        train_step(original, lote, LossWeights())
    copia = _estado(dados_treino, seed=9)
    copia.carregar({k: v.clone() for k, v in original.tensores().items()}, original.metadados())
    assert state_checksum(copia.modelo) == state_checksum(original.modelo)
    assert copia.ordem_embaralhada(12) == original.ordem_embaralhada(12)
    a = train_step(original, lote, LossWeights())
    b = train_step(copia, lote, LossWeights())
    assert a["total"] == pytest.approx(b["total"], abs=1e-6)
    assert a["lr"] == pytest.approx(b["lr"])


def test_embeddings_nuvens_unitarios(dados_treino):
    estado = _estado(dados_treino)
    corpus = dados_treino[0]
    embs = embeddings_nuvens(estado.modelo, [a.cloud.points for a in corpus])
    assert embs.shape == (12, 8)
    assert np.allclose(np.linalg.norm(embs, axis=1), 1.0)
