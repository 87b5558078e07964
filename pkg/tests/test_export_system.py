import json

import pandas as pd
import pytest

from src.avaliacao_zeroshot import RetrievalResult
from src.export_system import ExportSystem, carregar_relatorios, exportar_execucao
from src.persistencia import append_jsonl, write_report


@pytest.fixture
def execucao_falsa(tmp_path):
    """Diretório de execução com métricas, relatórios e recuperação escritos à mão"""
    diretorio = tmp_path / "execucao"
    diretorio.mkdir()
    (diretorio / "config.json").write_text("{}\n", encoding="utf-8")
    append_jsonl(diretorio / "metricas.jsonl", [
        {"epoca": e, "total": 4.0 / e, "contraste_nuvem_juncao": 1.0 / e,
         "contraste_nuvem_texto": 1.0 / e, "contraste_texto_juncao": 1.0 / e,
         "classificacao_pai": 1.0 / e, "lr": 1e-3, "passo": 3 * e}
        for e in (1, 2, 3)])
    write_report(diretorio / "relatorios" / "all.json", {"split": "All", "top1": 0.75, "top5": 1.0, "n": 4})
    write_report(diretorio / "relatorios" / "recuperacao.json",
                 RetrievalResult("box-cube-000#3", (("box-cube-000", 0.9), ("box-slab-001", 0.2))).to_dict())
    return diretorio


def test_exporta_execucao(execucao_falsa, tmp_path):
    exportados = exportar_execucao(execucao_falsa, tmp_path / "saida")
    assert {"metricas", "relatorio", "grafico_curvas_perda", "grafico_zeroshot", "resumo"} <= set(exportados)
    assert "grafico_ponte" not in exportados
    assert all(p.exists() for p in exportados.values())

    abas = pd.read_excel(exportados["relatorio"], sheet_name=None)
    assert set(abas) == {"Metricas", "Zeroshot", "Recuperacao"}
    assert list(abas["Recuperacao"]["id"]) == ["box-cube-000", "box-slab-001"]

    resumo = json.loads(exportados["resumo"].read_text(encoding="utf-8"))
    assert resumo["epocas"] == 3
    assert resumo["perda_final"] == pytest.approx(4.0 / 3)
    assert resumo["relatorios"]["all"] == {"top1": 0.75, "top5": 1.0, "n": 4}


def test_metricas_em_csv(execucao_falsa, tmp_path):
    caminho = exportar_execucao(execucao_falsa, tmp_path / "csv")["metricas"]
    df = pd.read_csv(caminho, encoding="utf-8-sig")
    assert list(df["epoca"]) == [1, 2, 3]


def test_sem_html(execucao_falsa, tmp_path):
    exportados = ExportSystem(tmp_path / "sem-html").export_run(execucao_falsa, incluir_html=False)
    assert not any(nome.startswith("grafico_") for nome in exportados)


def test_diretorio_que_nao_e_execucao(tmp_path):
    with pytest.raises(FileNotFoundError, match="config.json"):
        ExportSystem(tmp_path / "x").export_run(tmp_path)


def test_excel_sem_planilhas(tmp_path):
    with pytest.raises(ValueError, match="Nenhuma planilha"):
        ExportSystem(tmp_path).export_to_excel({})


def test_dados_invalidos(tmp_path):
    with pytest.raises(ValueError, match="dict, lista de dicts"):
        ExportSystem(tmp_path).export_to_csv("texto")


def test_carregar_relatorios_vazio(tmp_path):
    assert carregar_relatorios(tmp_path) == {}
